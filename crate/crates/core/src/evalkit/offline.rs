use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{ActionSource, PolicyRequest, PolicyResponse};
use crate::demogen::Episode;
use crate::error::{Error, Result};
use crate::trainer::split_held_out;

/// Predicted and recorded actions for one window, row-aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub episode_seed: u64,
    pub t: usize,
    pub predicted: Vec<Vec<f64>>,
    pub ground_truth: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowError {
    pub episode_seed: u64,
    pub t: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub config_id: String,
    pub dataset_id: String,
    pub horizon: usize,
    pub windows: Vec<WindowError>,
    pub mean_mse: f64,
    /// Trace of the first evaluated window, for plotting.
    pub trace: Option<ActionTrace>,
    pub warnings: Vec<String>,
}

impl OfflineReport {
    pub fn per_window(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.mse).collect()
    }
}

/// Mean over valid rows of `‖â − a‖²`, in the actions' own units.
pub fn chunk_mse(predicted: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if truth.is_empty() || predicted.len() < truth.len() {
        return Err(Error::Shape(format!("{} predicted rows for {} recorded", predicted.len(), truth.len())));
    }
    let mut total = 0.0;
    for (p, a) in predicted.iter().zip(truth) {
        if p.len() != a.len() {
            return Err(Error::Shape(format!("predicted width {} vs recorded {}", p.len(), a.len())));
        }
        total += p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total / truth.len() as f64)
}

/// Offline action error on the trailing held-out episodes of `episodes`.
///
/// Windows are drawn without replacement with `seed`; asking for more than
/// exist evaluates all of them and records a warning. Rows past the end of an
/// episode are not scored.
pub fn offline_mse(
    source: &mut dyn ActionSource,
    episodes: &[Episode],
    n_windows: usize,
    seed: u64,
    config_id: &str,
    dataset_id: &str,
) -> Result<OfflineReport> {
    let (_, held_out) = split_held_out(episodes);
    if held_out.is_empty() {
        return Err(Error::Contract(format!("{} episodes leave nothing held out", episodes.len())));
    }
    let spec = source.embodiment().clone();
    if let Some(e) = held_out.iter().find(|e| e.embodiment != spec.name) {
        return Err(Error::Config(format!("{} policy evaluated on {} data", spec.name, e.embodiment)));
    }
    let all: Vec<(usize, usize)> = held_out
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.len()).map(move |t| (i, t)))
        .collect();
    let mut warnings = Vec::new();
    let n = if n_windows > all.len() {
        warnings.push(format!("requested {n_windows} windows, only {} held out; using all", all.len()));
        all.len()
    } else {
        n_windows
    };
    if n == 0 {
        return Err(Error::Contract("no windows to evaluate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, all.len(), n).into_vec();
    picks.sort_unstable();

    let h = source.horizon();
    let mut windows = Vec::with_capacity(n);
    let mut trace = None;
    for &k in &picks {
        let (i, t) = all[k];
        let ep = &held_out[i];
        let step = &ep.steps[t];
        source.reset(ep.seed)?;
        let req = PolicyRequest {
            embodiment: ep.embodiment.clone(),
            instruction: ep.instruction.clone(),
            episode_seed: ep.seed,
            step: t as u64,
            observation: step.observation.clone(),
        };
        let PolicyResponse { actions } = source.act(&req)?;
        if actions.len() != h {
            return Err(Error::Shape(format!("policy returned {} rows, horizon is {h}", actions.len())));
        }
        let truth: Vec<Vec<f64>> = ep.steps[t..(t + h).min(ep.len())]
            .iter()
            .map(|s| s.action.iter().map(|&v| v as f64).collect())
            .collect();
        let mse = chunk_mse(&actions, &truth)?;
        if trace.is_none() {
            trace = Some(ActionTrace { episode_seed: ep.seed, t, predicted: actions[..truth.len()].to_vec(), ground_truth: truth });
        }
        windows.push(WindowError { episode_seed: ep.seed, t, mse });
    }
    let mean_mse = windows.iter().map(|w| w.mse).sum::<f64>() / windows.len() as f64;
    Ok(OfflineReport {
        config_id: config_id.to_string(),
        dataset_id: dataset_id.to_string(),
        horizon: h,
        windows,
        mean_mse,
        trace,
        warnings,
    })
}
