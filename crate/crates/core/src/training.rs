//! Fitting model parameters by minimizing the a priori prediction MSE over
//! short windows, with backpropagation through the unrolled window.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::diffable::AdamState;
use crate::error::{Error, Result};
use crate::gkf::fmt_f64;
use crate::models::GssModel;
use crate::rng::{Rng, Stream};
use crate::sim::Episode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub window: usize,
    pub patience: usize,
    /// Chronological train/validation/test fractions.
    pub split: [f64; 3],
    /// Unsupervised steps unrolled from the zero state before each window,
    /// so that long-memory dynamics reach their operating level before the
    /// loss is taken. Burn-in reads inputs only.
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            batch_size: 32,
            window: 12,
            patience: 10,
            split: [0.7, 0.1, 0.2],
            burn_in: 48,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split {:?} must be fractions summing to 1", self.split)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Chronological segments of an episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn split_segments(len: usize, split: [f64; 3]) -> Segments {
    let n_train = ((len as f64) * split[0]).round() as usize;
    let n_val = (((len as f64) * split[1]).round() as usize).min(len - n_train.min(len));
    let n_train = n_train.min(len);
    Segments {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..len,
    }
}

/// Start indices of stride-1 windows inside each segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Windows {
    pub segments: Segments,
    pub window: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn windows_in(seg: &Range<usize>, window: usize, frac: f64, name: &str) -> Result<Vec<usize>> {
    let len = seg.end - seg.start;
    if len < window {
        if frac > 0.0 {
            return Err(Error::Data(format!(
                "{name} segment has {len} steps, shorter than the window of {window}"
            )));
        }
        return Ok(Vec::new());
    }
    Ok((seg.start..=seg.end - window).collect())
}

pub fn make_windows(episode_len: usize, cfg: &TrainConfig) -> Result<Windows> {
    cfg.validate()?;
    if episode_len < cfg.window {
        return Err(Error::Data(format!(
            "episode has {episode_len} steps, shorter than the window of {}",
            cfg.window
        )));
    }
    let segments = split_segments(episode_len, cfg.split);
    Ok(Windows {
        train: windows_in(&segments.train, cfg.window, cfg.split[0], "train")?,
        val: windows_in(&segments.val, cfg.window, cfg.split[1], "validation")?,
        test: windows_in(&segments.test, cfg.window, cfg.split[2], "test")?,
        segments,
        window: cfg.window,
    })
}

/// Loss of one window. The state starts at zero `burn_in` steps before
/// `start` (clipped at the episode start), the prediction steps unroll up to
/// `start + window`, and the loss is the mean squared error over the
/// `window` supervised steps and all outputs. Returns the parameter
/// gradient, through burn-in included, when `with_grad`.
pub fn window_loss(
    model: &dyn GssModel,
    episode: &Episode,
    start: usize,
    window: usize,
    burn_in: usize,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if start + window > episode.len() {
        return Err(Error::Data(format!(
            "window {start}..{} exceeds episode length {}",
            start + window,
            episode.len()
        )));
    }
    let n_out = model.output_len();
    let scale = 1.0 / (window * n_out) as f64;
    let first = start.saturating_sub(burn_in);
    let steps = start + window - first;
    let mut s = vec![0.0; model.state_len()];
    let mut tape = Vec::with_capacity(if with_grad { steps } else { 0 });
    let mut loss = 0.0;
    let mut residuals = Vec::with_capacity(if with_grad { steps } else { 0 });
    for t in first..start + window {
        let x = episode.input_before(t);
        let x_enc = model.encode(&x)?;
        let next = model.transition(&s, &x_enc)?;
        let r: Option<Vec<f64>> = if t >= start {
            let y = model.readout(&next)?;
            let r: Vec<f64> = y.iter().zip(&episode.outputs[t]).map(|(a, b)| a - b).collect();
            loss += r.iter().map(|v| v * v).sum::<f64>();
            Some(r)
        } else {
            None
        };
        if with_grad {
            tape.push((x, x_enc, std::mem::replace(&mut s, next)));
            residuals.push(r);
        } else {
            s = next;
        }
    }
    loss *= scale;
    if !with_grad {
        return Ok((loss, None));
    }
    let mut g_params = vec![0.0; model.n_params()];
    let mut g_s = vec![0.0; model.state_len()];
    // s currently holds the final state; walk the tape backwards.
    for (k, (x, x_enc, s_prev)) in tape.iter().enumerate().rev() {
        if let Some(r) = &residuals[k] {
            let g_y: Vec<f64> = r.iter().map(|r| 2.0 * scale * r).collect();
            let g_from_y = model.readout_vjp(&s, &g_y, &mut g_params)?;
            g_s.iter_mut().zip(&g_from_y).for_each(|(a, b)| *a += b);
        }
        let (g_prev, g_xenc) = model.transition_vjp(s_prev, x_enc, &g_s, &mut g_params)?;
        model.encode_vjp(x, &g_xenc, &mut g_params)?;
        g_s = g_prev;
        s = s_prev.clone();
    }
    Ok((loss, Some(g_params)))
}

/// Mean window loss and gradient over a batch, reduced in a fixed order.
pub fn batch_loss(
    model: &dyn GssModel,
    episode: &Episode,
    starts: &[usize],
    window: usize,
    burn_in: usize,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if starts.is_empty() {
        return Ok((0.0, None));
    }
    let parts: Vec<(f64, Option<Vec<f64>>)> = starts
        .iter()
        .map(|&s| window_loss(model, episode, s, window, burn_in, with_grad))
        .collect::<Result<_>>()?;
    let inv = 1.0 / starts.len() as f64;
    let loss = parts.iter().map(|p| p.0).sum::<f64>() * inv;
    let grad = with_grad.then(|| {
        let mut g = vec![0.0; model.n_params()];
        for (_, pg) in &parts {
            if let Some(pg) = pg {
                g.iter_mut().zip(pg).for_each(|(a, b)| *a += b * inv);
            }
        }
        g
    });
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val_mse: f64,
    pub epochs: Vec<EpochMetrics>,
    /// 0 when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    pub test_mse: f64,
    pub params: Vec<f64>,
}

impl TrainReport {
    pub fn write_metrics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epoch", "train_mse", "val_mse"])?;
        wr.write_record(["0".to_string(), String::new(), fmt_f64(self.initial_val_mse)])?;
        for e in &self.epochs {
            wr.write_record([e.epoch.to_string(), fmt_f64(e.train_mse), fmt_f64(e.val_mse)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Adam over shuffled mini-batches of training windows with early stopping
/// on validation MSE. On return `model` holds the best-validation parameters.
pub fn train(model: &mut dyn GssModel, episode: &Episode, cfg: &TrainConfig) -> Result<TrainReport> {
    let windows = make_windows(episode.len(), cfg)?;
    if episode.n_nodes() != model.n_nodes() {
        return Err(Error::dim("train topology", model.n_nodes(), episode.n_nodes()));
    }
    let eval = |m: &dyn GssModel, starts: &[usize]| -> Result<f64> {
        Ok(batch_loss(m, episode, starts, cfg.window, cfg.burn_in, false)?.0)
    };

    let initial_val = eval(model, &windows.val)?;
    let mut best_val = initial_val;
    let mut best_params = model.params().to_vec();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut stopped_early = false;

    let mut params = model.params().to_vec();
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut shuffle = Rng::for_purpose(cfg.seed, Stream::Shuffle, 0);
    let mut order = windows.train.clone();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = batch_loss(model, episode, batch, cfg.window, cfg.burn_in, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {epoch}, batch {b}")));
            }
            let grad = grad.expect("gradient requested");
            adam.step(&mut params, &grad)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            model.set_params(&params)?;
            loss_sum += loss;
            n_batches += 1;
        }
        let val = eval(model, &windows.val)?;
        history.push(EpochMetrics {
            epoch,
            train_mse: if n_batches > 0 { loss_sum / n_batches as f64 } else { 0.0 },
            val_mse: val,
        });
        if val < best_val {
            best_val = val;
            best_params.clone_from(&params);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.set_params(&best_params)?;
    let test_mse = eval(model, &windows.test)?;
    Ok(TrainReport {
        initial_val_mse: initial_val,
        epochs: history,
        best_epoch,
        best_val_mse: best_val,
        stopped_early,
        test_mse,
        params: best_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        let cfg = TrainConfig::default();
        let w = make_windows(200, &cfg).unwrap();
        assert_eq!(w.segments.train, 0..140);
        assert_eq!(w.train.len(), 129);
        assert_eq!(w.val.len(), 9);
        assert_eq!(w.test.len(), 29);
        for &s in &w.train {
            assert!(s + cfg.window <= w.segments.train.end);
        }
        for &s in &w.val {
            assert!(s >= w.segments.val.start && s + cfg.window <= w.segments.val.end);
        }

        let all_train = TrainConfig {
            split: [1.0, 0.0, 0.0],
            ..TrainConfig::default()
        };
        let w = make_windows(12, &all_train).unwrap();
        assert_eq!(w.train, vec![0]);
        assert!(w.val.is_empty() && w.test.is_empty());
    }

    #[test]
    fn short_segment_is_an_error() {
        let cfg = TrainConfig::default();
        // 10% of 100 steps leaves a 10-step validation segment.
        let err = make_windows(100, &TrainConfig { window: 11, ..cfg.clone() });
        assert!(matches!(err, Err(Error::Data(_))));
        assert!(make_windows(5, &cfg).is_err());
    }

    #[test]
    fn split_sizes_for_default_episode() {
        let s = split_segments(5000, [0.7, 0.1, 0.2]);
        assert_eq!(s.train, 0..3500);
        assert_eq!(s.val, 3500..4000);
        assert_eq!(s.test, 4000..5000);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            split: [0.5, 0.5, 0.5],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { window: 0, ..TrainConfig::default() }.validate().is_err());
    }
}
