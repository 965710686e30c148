use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel: f64,
    pub mean_rel: f64,
    pub coords: usize,
}

/// Which parameter coordinates to probe.
#[derive(Debug, Clone, Copy)]
pub enum SampleSpec {
    All,
    Random { count: usize, seed: u64 },
}

/// Central finite differences against an analytic gradient.
///
/// For each selected coordinate, compares `(f(θ+h) - f(θ-h)) / 2h` with
/// `analytic[i]`, using relative error with denominator
/// `max(|fd|, |analytic|, 1e-8)`. `f` must be deterministic in `theta`.
pub fn finite_diff_check<F>(
    theta: &[f64],
    analytic: &[f64],
    mut f: F,
    step: f64,
    sample: SampleSpec,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        theta.len(),
        analytic.len(),
        "analytic gradient must match parameter count"
    );
    let coords: Vec<usize> = match sample {
        SampleSpec::All => (0..theta.len()).collect(),
        SampleSpec::Random { count, seed } => {
            let mut idx: Vec<usize> = (0..theta.len()).collect();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            idx.truncate(count.min(theta.len()));
            idx.sort_unstable();
            idx
        }
    };

    let mut work = theta.to_vec();
    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    for &i in &coords {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        let fd = (plus - minus) / (2.0 * step);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
        let rel = (fd - analytic[i]).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
        sum_rel += rel;
    }
    let n = coords.len().max(1);
    GradCheckReport {
        max_rel,
        mean_rel: sum_rel / n as f64,
        coords: coords.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let theta = vec![0.3, -1.2, 2.5];
        let analytic = vec![1.0; 3];
        let report = finite_diff_check(
            &theta,
            &analytic,
            |t| t.iter().sum(),
            1e-3,
            SampleSpec::All,
        );
        assert!(report.max_rel < 1e-9, "max_rel = {}", report.max_rel);
    }

    #[test]
    fn quadratic_function_matches_closed_form() {
        let theta = vec![1.0; 5];
        let analytic: Vec<f64> = theta.iter().map(|&t| 2.0 * t).collect();
        let report = finite_diff_check(
            &theta,
            &analytic,
            |t| t.iter().map(|&v| v * v).sum(),
            1e-3,
            SampleSpec::All,
        );
        assert!(report.max_rel < 1e-6, "max_rel = {}", report.max_rel);
    }

    #[test]
    fn random_sampling_probes_requested_count() {
        let theta = vec![0.5; 100];
        let analytic = vec![1.0; 100];
        let report = finite_diff_check(
            &theta,
            &analytic,
            |t| t.iter().sum(),
            1e-3,
            SampleSpec::Random { count: 17, seed: 3 },
        );
        assert_eq!(report.coords, 17);
    }
}
