use rayon::prelude::*;

use super::{stream_rng, SimConfig, Stepper, DEFAULT_DT};
use crate::covmodel::PairCovariance;
use crate::error::{Error, Result};
use crate::moments::{InitialState, ModelParams};

/// Minimum number of simulated pairs accepted by [`monte_carlo_covariance`].
pub const MIN_PATHS: usize = 1000;

/// Empirical pair covariances with delete-one jackknife standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPairCovariance {
    pub estimate: PairCovariance,
    pub std_error: PairCovariance,
    pub n_paths: usize,
}

/// Sample covariance (divisor n − 1) and its jackknife standard error.
///
/// Removing observation k changes the centred cross-product sum by
/// `n/(n−1) · (a_k − ā)(b_k − b̄)`, so all n replicates cost O(n).
pub(crate) fn covariance_with_jackknife(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len();
    let nf = n as f64;
    let ma = a.iter().sum::<f64>() / nf;
    let mb = b.iter().sum::<f64>() / nf;
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let s: f64 = prods.iter().sum();
    let loo: Vec<f64> = prods.iter().map(|p| (s - nf / (nf - 1.0) * p) / (nf - 2.0)).collect();
    let mean_loo = loo.iter().sum::<f64>() / nf;
    let var = (nf - 1.0) / nf * loo.iter().map(|c| (c - mean_loo).powi(2)).sum::<f64>();
    (s / (nf - 1.0), var.sqrt())
}

/// Simulates the two-species history (shared trunk of length `t_a`, then
/// independent branches of lengths `t_i` and `t_j`) `n_paths` times.
/// Path p uses generator stream p, so results do not depend on scheduling.
pub fn monte_carlo_covariance(
    params: &ModelParams,
    init: &InitialState,
    t_a: f64,
    t_i: f64,
    t_j: f64,
    n_paths: usize,
    config: &SimConfig,
) -> Result<McPairCovariance> {
    init.validate()?;
    if n_paths < MIN_PATHS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_PATHS} paths, got {n_paths}")));
    }
    if ![t_a, t_i, t_j].iter().all(|t| *t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument("times must be finite and >= 0".into()));
    }
    let stepper = Stepper::new(params, config)?;
    let dt = config.dt.unwrap_or(DEFAULT_DT);
    let ends: Vec<[f64; 4]> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(config.seed, p as u64);
            let mut trunk = stepper.initial(init);
            stepper.advance(&mut trunk, t_a, dt, &mut rng, |_, _| {})?;
            let mut si = trunk;
            stepper.advance(&mut si, t_i, dt, &mut rng, |_, _| {})?;
            let mut sj = trunk;
            stepper.advance(&mut sj, t_j, dt, &mut rng, |_, _| {})?;
            Ok([si.y, si.theta, sj.y, sj.theta])
        })
        .collect::<Result<_>>()?;
    let col = |k: usize| ends.iter().map(|e| e[k]).collect::<Vec<f64>>();
    let (yi, ti, yj, tj) = (col(0), col(1), col(2), col(3));
    let (yy, yy_se) = covariance_with_jackknife(&yi, &yj);
    let (ytj, ytj_se) = covariance_with_jackknife(&yi, &tj);
    let (yti, yti_se) = covariance_with_jackknife(&yj, &ti);
    let (tt, tt_se) = covariance_with_jackknife(&ti, &tj);
    Ok(McPairCovariance {
        estimate: PairCovariance { y_y: yy, y_i_theta_j: ytj, y_j_theta_i: yti, theta_theta: tt },
        std_error: PairCovariance {
            y_y: yy_se,
            y_i_theta_j: ytj_se,
            y_j_theta_i: yti_se,
            theta_theta: tt_se,
        },
        n_paths,
    })
}
