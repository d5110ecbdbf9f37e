//! Multi-input feedforward regressor.
//!
//! Each input branch is a small ReLU stack over one group of frame columns.
//! The branch outputs are concatenated and fed through a ReLU trunk to a
//! single linear output, which predicts the min-max scaled target.
//!
//! All weights live in one flat vector. A [`Layout`] derived from the
//! topology says where each layer's weights and activations sit, which keeps
//! the optimiser, the gradient check and the file format trivial.

mod file;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{lag_column_name, FeatureFrame, MinMaxScaler, Sample, TimeSeries};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{self, ErrorReport};

pub use file::{FORMAT_VERSION, MAGIC};
pub use train::{learning_rate, train, EpochStats, TrainConfig, Trained};

/// RNG stream ids, so init, split and shuffling never share draws.
const STREAM_INIT: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Named input groups accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    Qber,
    Visibility,
    LinkLoss,
    History,
    LaserPower,
}

impl FromStr for Input {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "qber" => Input::Qber,
            "visibility" => Input::Visibility,
            "link_loss" => Input::LinkLoss,
            "history" => Input::History,
            "laserpower" => Input::LaserPower,
            other => {
                return Err(Error::Config(format!(
                    "unknown input `{other}` (qber, visibility, link_loss, history, laserpower)"
                )))
            }
        })
    }
}

impl fmt::Display for Input {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Input::Qber => "qber",
            Input::Visibility => "visibility",
            Input::LinkLoss => "link_loss",
            Input::History => "history",
            Input::LaserPower => "laserpower",
        })
    }
}

pub fn parse_inputs(text: &str) -> Result<Vec<Input>> {
    let inputs = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Input>>>()?;
    if inputs.is_empty() {
        return Err(Error::Config("no model inputs given".into()));
    }
    Ok(inputs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub name: String,
    pub columns: Vec<String>,
    /// Overrides [`MlpTopology::branch_hidden`] for this branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

impl Branch {
    pub fn new(name: impl Into<String>, columns: Vec<String>) -> Self {
        Branch {
            name: name.into(),
            columns,
            hidden: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpTopology {
    pub branches: Vec<Branch>,
    /// Hidden sizes of every branch without its own override, ReLU.
    pub branch_hidden: Vec<usize>,
    /// Trunk sizes after concatenation, ReLU. The output layer is linear.
    pub trunk: Vec<usize>,
    pub target: String,
}

pub const DEFAULT_HISTORY_LAGS: [usize; 3] = [1, 2, 3];

impl MlpTopology {
    /// Branch sizes [64, 16] and trunk [64, 128, 32, 8] over the given inputs.
    pub fn standard(inputs: &[Input], history_lags: &[usize]) -> Self {
        let branches = inputs
            .iter()
            .map(|&inp| {
                let columns = match inp {
                    Input::History => history_lags.iter().map(|&k| lag_column_name("skr", k)).collect(),
                    other => vec![other.to_string()],
                };
                Branch::new(inp.to_string(), columns)
            })
            .collect();
        MlpTopology {
            branches,
            branch_hidden: vec![64, 16],
            trunk: vec![64, 128, 32, 8],
            target: "skr".into(),
        }
    }

    /// Each branch reduced to one layer as wide as its input, then a single
    /// 8-unit trunk layer. Kept as a low-capacity baseline.
    pub fn simplified(inputs: &[Input], history_lags: &[usize]) -> Self {
        let mut t = Self::standard(inputs, history_lags);
        for b in &mut t.branches {
            b.hidden = Some(vec![b.columns.len()]);
        }
        t.trunk = vec![8];
        t
    }

    /// Hidden sizes of branch `i`.
    pub fn branch_widths(&self, i: usize) -> &[usize] {
        self.branches[i].hidden.as_deref().unwrap_or(&self.branch_hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Config("topology needs at least one branch".into()));
        }
        if self.branches.iter().any(|b| b.columns.is_empty()) {
            return Err(Error::Config("every branch needs at least one column".into()));
        }
        for i in 0..self.branches.len() {
            let widths = self.branch_widths(i);
            if widths.is_empty() {
                return Err(Error::Config("branches need at least one hidden layer".into()));
            }
            if widths.contains(&0) {
                return Err(Error::Config("layer widths must be positive".into()));
            }
        }
        if self.trunk.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in self.input_columns() {
            if !seen.insert(c) {
                return Err(Error::Config(format!("column `{c}` appears in two branches")));
            }
        }
        Ok(())
    }

    /// Input columns in branch order; this is the row layout fed to the net.
    pub fn input_columns(&self) -> Vec<&str> {
        self.branches.iter().flat_map(|b| b.columns.iter().map(String::as_str)).collect()
    }

    pub fn input_width(&self) -> usize {
        self.branches.iter().map(|b| b.columns.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    /// Slice of the input row.
    Input { offset: usize, len: usize },
    /// Slice of the activation buffer.
    Act { offset: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    /// Row-major `fan_out × fan_in` weights, then `fan_out` biases.
    param_offset: usize,
    act_offset: usize,
    relu: bool,
    source: Source,
}

impl Dense {
    fn bias_offset(&self) -> usize {
        self.param_offset + self.fan_in * self.fan_out
    }
}

/// Layers in evaluation order plus buffer sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    layers: Vec<Dense>,
    n_params: usize,
    n_act: usize,
}

impl Layout {
    fn new(topo: &MlpTopology) -> Self {
        // Activation buffer: inner branch layers first, then the last layer
        // of every branch back to back (that block is the concatenation),
        // then the trunk and the output.
        let widths: Vec<&[usize]> = (0..topo.branches.len()).map(|i| topo.branch_widths(i)).collect();
        let concat_offset: usize = widths.iter().map(|w| w[..w.len() - 1].iter().sum::<usize>()).sum();
        let concat_len: usize = widths.iter().map(|w| w[w.len() - 1]).sum();

        let mut layers = Vec::new();
        let mut n_params = 0;
        let mut push = |fan_in: usize, fan_out: usize, act_offset: usize, relu: bool, source: Source| {
            layers.push(Dense {
                fan_in,
                fan_out,
                param_offset: n_params,
                act_offset,
                relu,
                source,
            });
            n_params += fan_in * fan_out + fan_out;
        };

        let mut input_offset = 0;
        let mut inner_offset = 0;
        let mut last_offset = concat_offset;
        for (branch, hidden) in topo.branches.iter().zip(&widths) {
            let width = branch.columns.len();
            let mut source = Source::Input {
                offset: input_offset,
                len: width,
            };
            let mut fan_in = width;
            for (li, &h) in hidden.iter().enumerate() {
                let slot = if li + 1 == hidden.len() { &mut last_offset } else { &mut inner_offset };
                let act_offset = *slot;
                *slot += h;
                push(fan_in, h, act_offset, true, source);
                source = Source::Act {
                    offset: act_offset,
                    len: h,
                };
                fan_in = h;
            }
            input_offset += width;
        }

        let mut act_offset = concat_offset + concat_len;
        let mut source = Source::Act {
            offset: concat_offset,
            len: concat_len,
        };
        let mut fan_in = concat_len;
        for &h in &topo.trunk {
            push(fan_in, h, act_offset, true, source);
            source = Source::Act {
                offset: act_offset,
                len: h,
            };
            fan_in = h;
            act_offset += h;
        }
        push(fan_in, 1, act_offset, false, source);
        let n_act = act_offset + 1;
        Layout {
            layers,
            n_params,
            n_act,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }
}

/// Adam first and second moments with the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub topology: MlpTopology,
    pub params: Vec<f64>,
    pub adam: AdamState,
    /// Fitted on the training rows; covers every input column and the target.
    pub scaler: MinMaxScaler,
    pub history: Vec<EpochStats>,
    layout: Layout,
}

/// Scratch buffers for one forward/backward pass.
pub struct Workspace {
    act: Vec<f64>,
    dact: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, identity scaler.
    pub fn init(topology: MlpTopology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let layout = Layout::new(&topology);
        let mut params = vec![0.0; layout.n_params];
        let mut r = rng(seed, STREAM_INIT);
        for l in &layout.layers {
            let limit = glorot_limit(l.fan_in, l.fan_out);
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in &mut params[l.param_offset..l.bias_offset()] {
                *w = dist.sample(&mut r);
            }
        }
        let n = layout.n_params;
        let mut cols: Vec<&str> = topology.input_columns();
        cols.push(&topology.target);
        let scaler = MinMaxScaler {
            columns: cols
                .into_iter()
                .map(|c| crate::data::ColumnRange {
                    name: c.to_string(),
                    min: 0.0,
                    max: 1.0,
                })
                .collect(),
        };
        Ok(MlpModel {
            topology,
            params,
            adam: AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
            scaler,
            history: Vec::new(),
            layout,
        })
    }

    pub(crate) fn from_parts(
        topology: MlpTopology,
        params: Vec<f64>,
        adam: AdamState,
        scaler: MinMaxScaler,
        history: Vec<EpochStats>,
    ) -> Result<Self> {
        topology.validate()?;
        let layout = Layout::new(&topology);
        if params.len() != layout.n_params || adam.m.len() != params.len() || adam.v.len() != params.len() {
            return Err(Error::Corrupt("weight count does not match topology".into()));
        }
        Ok(MlpModel {
            topology,
            params,
            adam,
            scaler,
            history,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            act: vec![0.0; self.layout.n_act],
            dact: vec![0.0; self.layout.n_act],
        }
    }

    /// Prediction for one already-scaled input row laid out in branch order.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.topology.input_width() {
            return Err(Error::Shape(format!(
                "input row has {} values, topology expects {}",
                x.len(),
                self.topology.input_width()
            )));
        }
        Ok(self.forward_ws(&self.params, x, &mut self.workspace()))
    }

    fn forward_ws(&self, params: &[f64], x: &[f64], ws: &mut Workspace) -> f64 {
        for l in &self.layout.layers {
            let (before, rest) = ws.act.split_at_mut(l.act_offset);
            let input: &[f64] = match l.source {
                Source::Input { offset, len } => &x[offset..offset + len],
                Source::Act { offset, len } => &before[offset..offset + len],
            };
            let out = &mut rest[..l.fan_out];
            let w = &params[l.param_offset..l.bias_offset()];
            let b = &params[l.bias_offset()..l.bias_offset() + l.fan_out];
            for (j, o) in out.iter_mut().enumerate() {
                let row = &w[j * l.fan_in..(j + 1) * l.fan_in];
                let z = b[j] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                *o = if l.relu { z.max(0.0) } else { z };
            }
        }
        ws.act[self.layout.n_act - 1]
    }

    /// Adds the gradient of `scale * prediction` for row `x` to `grad`,
    /// assuming `forward_ws` has just run on `x`.
    fn backward_ws(&self, params: &[f64], x: &[f64], scale: f64, grad: &mut [f64], ws: &mut Workspace) {
        ws.dact.iter_mut().for_each(|d| *d = 0.0);
        ws.dact[self.layout.n_act - 1] = scale;
        for l in self.layout.layers.iter().rev() {
            let bo = l.bias_offset();
            let (dbefore, drest) = ws.dact.split_at_mut(l.act_offset);
            let delta = &mut drest[..l.fan_out];
            if l.relu {
                for (d, a) in delta.iter_mut().zip(&ws.act[l.act_offset..l.act_offset + l.fan_out]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input: &[f64] = match l.source {
                Source::Input { offset, len } => &x[offset..offset + len],
                Source::Act { offset, len } => &ws.act[offset..offset + len],
            };
            let w = &params[l.param_offset..bo];
            let (gw, gb) = grad[l.param_offset..bo + l.fan_out].split_at_mut(l.fan_in * l.fan_out);
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[j] += d;
                for (g, xi) in gw[j * l.fan_in..(j + 1) * l.fan_in].iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if let Source::Act { offset, len } = l.source {
                let din = &mut dbefore[offset..offset + len];
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (di, wi) in din.iter_mut().zip(&w[j * l.fan_in..(j + 1) * l.fan_in]) {
                        *di += d * wi;
                    }
                }
            }
        }
    }

    /// Mean squared error of `params` on a batch of scaled rows.
    pub fn loss_with(&self, params: &[f64], rows: &[&[f64]], targets: &[f64]) -> f64 {
        let mut ws = self.workspace();
        let sum: f64 = rows
            .iter()
            .zip(targets)
            .map(|(x, y)| {
                let e = self.forward_ws(params, x, &mut ws) - y;
                e * e
            })
            .sum();
        sum / rows.len() as f64
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, rows: &[&[f64]], targets: &[f64]) -> (f64, Vec<f64>) {
        let mut ws = self.workspace();
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(&self.params, rows, targets, &mut grad, &mut ws);
        (loss, grad)
    }

    fn accumulate_gradient(
        &self,
        params: &[f64],
        rows: &[&[f64]],
        targets: &[f64],
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let n = rows.len() as f64;
        let mut loss = 0.0;
        for (x, y) in rows.iter().zip(targets) {
            let e = self.forward_ws(params, x, ws) - y;
            loss += e * e;
            self.backward_ws(params, x, 2.0 * e / n, grad, ws);
        }
        loss / n
    }

    /// Scaled input matrix (row-major) for every frame row.
    pub fn scaled_inputs(&self, frame: &FeatureFrame) -> Result<Vec<f64>> {
        let cols = self.topology.input_columns();
        let width = cols.len();
        let mut out = vec![0.0; frame.len() * width];
        for (k, c) in cols.iter().enumerate() {
            let range = self.scaler.range(c)?;
            let span = range.max - range.min;
            for (i, v) in frame.column(c)?.iter().enumerate() {
                out[i * width + k] = (v - range.min) / span;
            }
        }
        Ok(out)
    }

    /// Scaled predictions for every frame row.
    pub fn predict_scaled(&self, frame: &FeatureFrame, exec: Execution) -> Result<Vec<f64>> {
        let width = self.topology.input_width();
        let x = self.scaled_inputs(frame)?;
        const CHUNK: usize = 256;
        let n_chunks = frame.len().div_ceil(CHUNK);
        let chunks = exec.map_range(n_chunks, |c| {
            let mut ws = self.workspace();
            let end = ((c + 1) * CHUNK).min(frame.len());
            (c * CHUNK..end)
                .map(|i| self.forward_ws(&self.params, &x[i * width..(i + 1) * width], &mut ws))
                .collect::<Vec<f64>>()
        });
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Predicted target in raw units, one sample per frame row.
    pub fn predict_frame(&self, frame: &FeatureFrame, exec: Execution) -> Result<TimeSeries> {
        let scaled = self.predict_scaled(frame, exec)?;
        let t = &self.topology.target;
        let samples = frame
            .timestamps
            .iter()
            .zip(scaled)
            .map(|(&time, y)| Ok(Sample::new(time, self.scaler.unscale_value(t, y)?)))
            .collect::<Result<_>>()?;
        Ok(TimeSeries::new(t.clone(), samples))
    }

    /// Measured and predicted target, raw and scaled, for every frame row.
    pub fn prediction_table(&self, frame: &FeatureFrame, exec: Execution) -> Result<PredictionTable> {
        let t = &self.topology.target;
        let measured = frame.column(t)?.to_vec();
        let predicted_scaled = self.predict_scaled(frame, exec)?;
        let predicted = predicted_scaled
            .iter()
            .map(|&y| self.scaler.unscale_value(t, y))
            .collect::<Result<_>>()?;
        let measured_scaled = measured
            .iter()
            .map(|&y| self.scaler.scale_value(t, y))
            .collect::<Result<_>>()?;
        Ok(PredictionTable {
            timestamps: frame.timestamps.clone(),
            measured,
            predicted,
            measured_scaled,
            predicted_scaled,
        })
    }

    pub fn evaluate(&self, frame: &FeatureFrame, exec: Execution) -> Result<ErrorReport> {
        self.prediction_table(frame, exec)?.report()
    }
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub timestamps: Vec<chrono::DateTime<chrono::Utc>>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub measured_scaled: Vec<f64>,
    pub predicted_scaled: Vec<f64>,
}

impl PredictionTable {
    pub fn report(&self) -> Result<ErrorReport> {
        metrics::compute(&self.measured, &self.predicted, &self.measured_scaled, &self.predicted_scaled)
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["timestamp", "measured", "predicted", "measured_scaled", "predicted_scaled"])
            .map_err(err)?;
        for i in 0..self.measured.len() {
            w.write_record([
                self.timestamps[i].to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
                self.measured[i].to_string(),
                self.predicted[i].to_string(),
                self.measured_scaled[i].to_string(),
                self.predicted_scaled[i].to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(super) fn toy_topology() -> MlpTopology {
        MlpTopology {
            branches: vec![
                Branch::new("a", vec!["qber".into()]),
                Branch::new("b", vec!["visibility".into()]),
                Branch::new("c", vec!["link_loss".into()]),
                Branch::new("d", vec!["h1".into(), "h2".into(), "h3".into()]),
            ],
            branch_hidden: vec![4, 2],
            trunk: vec![4, 2],
            target: "skr".into(),
        }
    }

    #[test]
    fn standard_topology_shape() {
        let t = MlpTopology::standard(
            &[Input::Qber, Input::Visibility, Input::LinkLoss, Input::History],
            &DEFAULT_HISTORY_LAGS,
        );
        assert_eq!(t.input_columns(), vec!["qber", "visibility", "link_loss", "skr_lag1", "skr_lag2", "skr_lag3"]);
        let m = MlpModel::init(t, 1).unwrap();
        // per branch: (w*64+64) + (64*16+16); trunk 64->64->128->32->8; out 8->1
        let branch = |w: usize| w * 64 + 64 + 64 * 16 + 16;
        let trunk = 64 * 64 + 64 + 64 * 128 + 128 + 128 * 32 + 32 + 32 * 8 + 8 + 8 + 1;
        assert_eq!(m.layout.n_params, 3 * branch(1) + branch(3) + trunk);
    }

    #[test]
    fn simplified_topology_shape() {
        let inputs = [Input::Qber, Input::Visibility, Input::LinkLoss, Input::History];
        let t = MlpTopology::simplified(&inputs, &DEFAULT_HISTORY_LAGS);
        let widths: Vec<_> = (0..4).map(|i| t.branch_widths(i).to_vec()).collect();
        assert_eq!(widths, vec![vec![1], vec![1], vec![1], vec![3]]);
        let m = MlpModel::init(t, 1).unwrap();
        // branches 3*(1+1) + (9+3); trunk 6->8; out 8->1
        assert_eq!(m.layout.n_params, 6 + 12 + 56 + 9);

        let mut bad = MlpTopology::simplified(&inputs, &DEFAULT_HISTORY_LAGS);
        bad.branches[0].hidden = Some(vec![]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MlpModel::init(toy_topology(), 7).unwrap();
        let b = MlpModel::init(toy_topology(), 7).unwrap();
        let c = MlpModel::init(toy_topology(), 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        for l in &a.layout.layers {
            let lim = glorot_limit(l.fan_in, l.fan_out);
            assert!(a.params[l.param_offset..l.bias_offset()].iter().all(|w| w.abs() <= lim));
            assert!(a.params[l.bias_offset()..l.bias_offset() + l.fan_out].iter().all(|b| *b == 0.0));
        }
        assert_eq!(glorot_limit(64, 16), (6.0f64 / 80.0).sqrt());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = MlpModel::init(toy_topology(), 1).unwrap();
        m.params.iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(m.forward(&[0.3, -2.0, 5.0, 1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn hand_computed_forward() {
        // one unit everywhere: branch x -> relu(2x + 0.5); trunk relu(sum*1 - 1); out 3h + 0.25
        let topo = MlpTopology {
            branches: vec![
                Branch::new("a", vec!["a".into()]),
                Branch::new("b", vec!["b".into()]),
            ],
            branch_hidden: vec![1],
            trunk: vec![1],
            target: "y".into(),
        };
        let mut m = MlpModel::init(topo, 0).unwrap();
        m.params = vec![2.0, 0.5, 2.0, 0.5, 1.0, 1.0, -1.0, 3.0, 0.25];
        // a=1 -> 2.5, b=-1 -> relu(-1.5)=0; trunk relu(2.5-1)=1.5; out 4.75
        assert_eq!(m.forward(&[1.0, -1.0]).unwrap(), 4.75);
        // negative pre-activation downstream of branch b contributes nothing
        assert_eq!(m.forward(&[1.0, -7.0]).unwrap(), 4.75);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for batch in 0..10 {
            fd_check(toy_topology(), batch);
        }
    }

    #[test]
    fn per_branch_overrides_keep_gradients_exact() {
        let mut t = toy_topology();
        t.branches[1].hidden = Some(vec![1]);
        t.branches[3].hidden = Some(vec![5, 3, 2]);
        for seed in 0..3 {
            fd_check(t.clone(), seed);
        }
    }

    fn fd_check(topology: MlpTopology, seed: u64) {
        let mut r = rng(99, seed);
        let width = topology.input_width();
        // random biases too, so no unit sits exactly on the ReLU kink
        let mut m = MlpModel::init(topology, seed).unwrap();
        m.params.iter_mut().for_each(|p| *p = r.gen_range(-1.0..1.0));
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..width).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let targets: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (_, g) = m.loss_and_gradient(&refs, &targets);
        let h = 1e-5;
        let mut p = m.params.clone();
        for i in 0..p.len() {
            let x0 = p[i];
            p[i] = x0 + h;
            let up = m.loss_with(&p, &refs, &targets);
            p[i] = x0 - h;
            let down = m.loss_with(&p, &refs, &targets);
            p[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(1e-6);
            assert!((g[i] - fd).abs() / scale < 1e-4, "seed {seed} param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn loss_is_quadratic_in_residual() {
        let m = MlpModel::init(toy_topology(), 3).unwrap();
        let row = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let y = m.forward(&row).unwrap();
        let l1 = m.loss_with(&m.params, &[&row], &[y + 0.5]);
        let l2 = m.loss_with(&m.params, &[&row], &[y + 1.0]);
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
        let (l0, g) = m.loss_and_gradient(&[&row], &[y]);
        assert_eq!(l0, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_prediction_matches_rows() {
        let mut topo = toy_topology();
        topo.branches[3].columns = vec!["skr_lag1".into(), "skr_lag2".into(), "skr_lag3".into()];
        let m = MlpModel::init(topo, 5).unwrap();
        let n = 600;
        let mut f = FeatureFrame::new(
            (0..n).map(|i| chrono::DateTime::from_timestamp(i as i64 * 600, 0).unwrap()).collect(),
        );
        for (k, c) in ["qber", "visibility", "link_loss", "skr_lag1", "skr_lag2", "skr_lag3", "skr"].iter().enumerate() {
            f.set_column(*c, (0..n).map(|i| ((i * (k + 3)) % 17) as f64 / 17.0).collect()).unwrap();
        }
        let seq = m.predict_scaled(&f, Execution::Sequential).unwrap();
        let par = m.predict_scaled(&f, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        let x = m.scaled_inputs(&f).unwrap();
        for i in [0, 255, 256, 599] {
            assert_eq!(seq[i], m.forward(&x[i * 6..(i + 1) * 6]).unwrap());
        }
        let raw = m.predict_frame(&f, Execution::Sequential).unwrap();
        assert_eq!(raw.samples[0].value, seq[0]); // identity scaler
    }

    #[test]
    fn topology_validation() {
        let mut t = toy_topology();
        t.trunk = vec![4, 0];
        assert!(MlpModel::init(t, 0).is_err());
        let mut t = toy_topology();
        t.branches[1].columns = vec!["qber".into()];
        assert!(t.validate().is_err());
        assert_eq!(parse_inputs("qber,history").unwrap(), vec![Input::Qber, Input::History]);
        assert!(parse_inputs("qber,nope").is_err());
    }
}
