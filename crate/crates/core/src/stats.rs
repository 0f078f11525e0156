//! Binomial intervals for judging attack success rates against chance.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

/// Two-sided acceptance interval, as rates, for the success rate of
/// `trials` Bernoulli(p) draws at the given confidence level: the
/// (1−level)/2 and (1+level)/2 quantiles of Binomial(trials, p) over trials.
pub fn binomial_acceptance_interval(trials: u64, p: f64, level: f64) -> (f64, f64) {
    assert!(trials > 0 && (0.0..=1.0).contains(&p) && level > 0.0 && level < 1.0);
    let dist = Binomial::new(p, trials).expect("valid binomial parameters");
    let tail = (1.0 - level) / 2.0;
    let lo = dist.inverse_cdf(tail);
    let hi = dist.inverse_cdf(1.0 - tail);
    (lo as f64 / trials as f64, hi as f64 / trials as f64)
}

/// Wilson score interval for an observed proportion.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 + level / 2.0);
    let n = trials as f64;
    let phat = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (phat + z * z / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}
