use crate::demogen::Episode;
use crate::error::{Error, Result};
use crate::nets::{NormStats, PolicySpec};
use crate::simenv::Observation;
use crate::Tensor;

/// Training example: the observation at step `t` of an episode and the
/// actions `t..t+H` that follow it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub episode: usize,
    pub t: usize,
}

/// Number of trailing episodes held out for offline evaluation.
pub fn held_out_count(n_episodes: usize) -> usize {
    if n_episodes < 2 {
        0
    } else {
        n_episodes.div_ceil(10)
    }
}

/// Splits episodes into the leading training part and the trailing held-out part.
pub fn split_held_out(episodes: &[Episode]) -> (&[Episode], &[Episode]) {
    episodes.split_at(episodes.len() - held_out_count(episodes.len()))
}

/// Population statistics of every state and action in `episodes`.
pub fn summarize(episodes: &[Episode]) -> Result<NormStats> {
    let rows = || episodes.iter().flat_map(|e| &e.steps);
    let first = rows().next().ok_or_else(|| Error::Contract("no steps to summarize".into()))?;
    let (state_mean, state_std) = NormStats::column_stats(rows().map(|s| s.observation.state.as_slice()), first.observation.state.len());
    let (action_mean, action_std) = NormStats::column_stats(rows().map(|s| s.action.as_slice()), first.action.len());
    Ok(NormStats { state_mean, state_std, action_mean, action_std })
}

/// Episodes plus the normalization statistics they were summarized with.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    episodes: Vec<Episode>,
    stats: NormStats,
    windows: Vec<Window>,
}

impl TrainingSet {
    pub fn new(episodes: Vec<Episode>, stats: NormStats) -> Result<Self> {
        let Some(first) = episodes.first() else {
            return Err(Error::Contract("training set has no episodes".into()));
        };
        if let Some(e) = episodes.iter().find(|e| e.embodiment != first.embodiment) {
            return Err(Error::Contract(format!("episodes mix {} and {}", first.embodiment, e.embodiment)));
        }
        let windows = episodes
            .iter()
            .enumerate()
            .flat_map(|(i, e)| (0..e.len()).map(move |t| Window { episode: i, t }))
            .collect::<Vec<_>>();
        if windows.is_empty() {
            return Err(Error::Contract("training set has no steps".into()));
        }
        Ok(Self { episodes, stats, windows })
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn embodiment(&self) -> &str {
        &self.episodes[0].embodiment
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn has_depth(&self) -> bool {
        self.episodes.iter().flat_map(|e| &e.steps).all(|s| s.observation.depth.is_some())
    }

    pub fn observation(&self, w: Window) -> &Observation {
        &self.episodes[w.episode].steps[w.t].observation
    }

    pub fn instruction(&self, w: Window) -> &str {
        &self.episodes[w.episode].instruction
    }

    /// Raw actions `t..t+H`, the tail padded by repeating the last action,
    /// with `true` marking real rows.
    pub fn action_chunk(&self, w: Window, horizon: usize) -> (Vec<&[f32]>, Vec<bool>) {
        let steps = &self.episodes[w.episode].steps;
        let last = steps.len() - 1;
        (0..horizon)
            .map(|k| {
                let i = w.t + k;
                (steps[i.min(last)].action.as_slice(), i <= last)
            })
            .unzip()
    }

    /// Normalized action chunk `[H × a]` and the matching row mask `[H × a]`.
    pub fn target(&self, w: Window, horizon: usize) -> Result<(Tensor, Tensor)> {
        let (rows, mask) = self.action_chunk(w, horizon);
        let a = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| self.stats.normalize_action(r)).collect();
        let m: Vec<f64> = mask.iter().flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, a)).collect();
        Ok((Tensor::new(&[horizon, a], data)?, Tensor::new(&[horizon, a], m)?))
    }

    /// Config error unless a policy with `spec` can be trained on this data.
    pub fn check_compatible(&self, spec: &PolicySpec) -> Result<()> {
        let e = &spec.embodiment;
        if self.embodiment() != e.name {
            return Err(Error::Config(format!("dataset is {}, policy is {}", self.embodiment(), e.name)));
        }
        if self.stats.state_mean.len() != e.state_dim || self.stats.action_mean.len() != e.action_dim {
            return Err(Error::Config("normalization statistics do not match the embodiment".into()));
        }
        if spec.modality.uses_depth() && !self.has_depth() {
            return Err(Error::Config(format!("modality {} needs depth, dataset has none", spec.modality)));
        }
        let s = &self.episodes[0].steps[0];
        if s.observation.state.len() != e.state_dim || s.action.len() != e.action_dim {
            return Err(Error::Config("dataset records do not match the embodiment dimensions".into()));
        }
        if spec.modality.contact_token() && s.observation.forces.len() != e.n_forces {
            return Err(Error::Config("dataset lacks fingertip forces".into()));
        }
        if let Some(i) = self.episodes.iter().find(|ep| !spec.instructions.contains(&ep.instruction)) {
            return Err(Error::Config(format!("instruction `{}` is not in the policy's table", i.instruction)));
        }
        Ok(())
    }
}
