use statrs::distribution::{ContinuousCDF, StudentsT};

use super::session::Session;
use crate::error::{Error, Result};
use crate::signal;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningResult {
    pub t_stat: f64,
    pub p_value: f64,
    pub responsive: bool,
}

/// Paired t-test of mean EDA in each pinch interval against the equally long
/// rest period immediately preceding it.
///
/// Zero variance of the paired differences is handled explicitly: all-zero
/// differences give `t = 0, p = 1`; a constant non-zero difference gives an
/// infinite `t` and `p = 0`.
pub fn screen_responders(session: &Session) -> Result<ScreeningResult> {
    let eda = &session.eda;
    let mut diffs = Vec::new();
    for p in &session.pinch_intervals {
        let rest_start = p.start_s - p.duration_s();
        if rest_start < 0.0 {
            continue;
        }
        let stress = eda.slice_time(p.start_s, p.end_s);
        let rest = eda.slice_time(rest_start, p.start_s);
        if stress.is_empty() || rest.is_empty() {
            continue;
        }
        diffs.push(signal::mean(stress) - signal::mean(rest));
    }
    if diffs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "paired t-test needs at least 2 stress/rest pairs, found {}",
            diffs.len()
        )));
    }
    let (t_stat, p_value) = paired_t(&diffs);
    Ok(ScreeningResult {
        t_stat,
        p_value,
        responsive: p_value < SIGNIFICANCE_LEVEL,
    })
}

/// One-sample t-test of the differences against zero; two-sided p.
pub(crate) fn paired_t(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len() as f64;
    let m = signal::mean(diffs);
    let sd = signal::sample_std(diffs);
    if sd == 0.0 {
        return if m == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(m), 0.0)
        };
    }
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("df >= 1");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    (t, p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_synthetic_session, SynthConfig};

    fn cfg() -> SynthConfig {
        SynthConfig {
            fs_video: 10.0,
            frame_size: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn strong_steps_are_responsive() {
        let c = SynthConfig {
            pinch_step_us: 3.0,
            tonic_walk_us: 0.1,
            phasic_rate_per_min: 0.0,
            ..cfg()
        };
        let s = generate_synthetic_session(&c, 1).unwrap();
        let r = screen_responders(&s).unwrap();
        // Two-sided critical value of Student's t at p = 0.01 with 2 degrees of freedom.
        const T_CRIT_DF2_P01: f64 = 9.925;
        assert!(r.t_stat > T_CRIT_DF2_P01, "t = {}", r.t_stat);
        assert!(r.p_value < 0.01);
        assert!(r.responsive);
    }

    #[test]
    fn flat_eda_is_not_responsive() {
        let s = generate_synthetic_session(&cfg(), 1).unwrap();
        let flat = s.eda.map(|_| 0.0).unwrap();
        let s = s.with_eda(flat).unwrap();
        let r = screen_responders(&s).unwrap();
        assert_eq!((r.t_stat, r.p_value, r.responsive), (0.0, 1.0, false));
    }

    #[test]
    fn negation_flips_t_keeps_p() {
        let s = generate_synthetic_session(&cfg(), 3).unwrap();
        let a = screen_responders(&s).unwrap();
        let neg = s.with_eda(s.eda.map(|v| -v).unwrap()).unwrap();
        let b = screen_responders(&neg).unwrap();
        assert!((a.t_stat + b.t_stat).abs() < 1e-9 * a.t_stat.abs().max(1.0));
        assert!((a.p_value - b.p_value).abs() < 1e-12);
    }

    #[test]
    fn one_pair_is_insufficient() {
        let mut s = generate_synthetic_session(&cfg(), 3).unwrap();
        s.pinch_intervals.truncate(1);
        assert!(matches!(screen_responders(&s), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn t_matches_hand_computation() {
        // diffs 1, 2, 3: mean 2, sd 1, t = 2 / (1 / sqrt 3)
        let (t, p) = paired_t(&[1.0, 2.0, 3.0]);
        assert!((t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // Tabulated two-sided p for t = 3.4641, df = 2 is about 0.0742.
        assert!((p - 0.0742).abs() < 5e-4, "p = {p}");
    }
}
