//! On-disk formats: episode directories and model checkpoints.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gkf::fmt_f64;
use crate::graph::GraphTopology;
use crate::models::{Activation, AnyModel, Dims, GssModel, LinearAdjacency, ModelFamily, Replica, ReplicaParams, Stgnn};
use crate::sim::{Episode, GeneratorConfig};
use crate::training::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMeta {
    pub format_version: u32,
    pub config: GeneratorConfig,
    pub seed: u64,
    pub n_nodes: usize,
    pub steps: usize,
    pub edges: Vec<(usize, usize)>,
}

fn check_version(found: u32, what: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{what} has format version {found}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Reads a JSON object from `path` and lays its keys over `base`. Keys the
/// target type does not know are rejected.
pub fn overlay_config<T>(base: &T, path: &Path) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let patch: serde_json::Value = read_json(path)?;
    let serde_json::Value::Object(patch) = patch else {
        return Err(Error::InvalidConfig(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(base)?;
    if let serde_json::Value::Object(fields) = &mut merged {
        fields.extend(patch);
    }
    serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Writes a `t,node,value` table.
pub fn write_signal_csv(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["t", "node", "value"])?;
    for (t, row) in rows.iter().enumerate() {
        for (v, value) in row.iter().enumerate() {
            w.write_record([t.to_string(), v.to_string(), fmt_f64(*value)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `t,node,value` table into a `steps x n_nodes` array. Every
/// `(t, node)` cell must appear exactly once.
pub fn read_signal_csv(path: &Path, steps: usize, n_nodes: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(BufReader::new(
        File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    ));
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "node", "value"] {
        return Err(Error::Data(format!("{}: expected header t,node,value", path.display())));
    }
    let mut out = vec![vec![f64::NAN; n_nodes]; steps];
    let mut seen = vec![vec![false; n_nodes]; steps];
    let mut count = 0usize;
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| Error::Data(format!("{}: bad {what} in row {}", path.display(), count + 1));
        let t: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("t"))?;
        let v: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("node"))?;
        let value: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("value"))?;
        if t >= steps || v >= n_nodes {
            return Err(Error::Data(format!(
                "{}: cell ({t}, {v}) outside {steps} x {n_nodes}",
                path.display()
            )));
        }
        if seen[t][v] {
            return Err(Error::Data(format!("{}: duplicate cell ({t}, {v})", path.display())));
        }
        seen[t][v] = true;
        out[t][v] = value;
        count += 1;
    }
    if count != steps * n_nodes {
        return Err(Error::Data(format!(
            "{}: {count} rows, expected {}",
            path.display(),
            steps * n_nodes
        )));
    }
    Ok(out)
}

/// Writes `meta.json`, `inputs.csv`, `outputs.csv` and, when present,
/// `states.csv`.
pub fn write_episode(dir: &Path, ep: &Episode) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = EpisodeMeta {
        format_version: FORMAT_VERSION,
        config: ep.config.clone(),
        seed: ep.config.seed,
        n_nodes: ep.n_nodes(),
        steps: ep.len(),
        edges: ep.topology.edges(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    write_signal_csv(&dir.join("inputs.csv"), &ep.inputs)?;
    write_signal_csv(&dir.join("outputs.csv"), &ep.outputs)?;
    if let Some(states) = &ep.states {
        write_signal_csv(&dir.join("states.csv"), states)?;
    }
    Ok(())
}

pub fn read_episode_meta(dir: &Path) -> Result<EpisodeMeta> {
    let meta: EpisodeMeta = read_json(&dir.join("meta.json"))?;
    check_version(meta.format_version, "episode")?;
    if meta.n_nodes != meta.config.n_nodes || meta.steps != meta.config.steps {
        return Err(Error::Data("meta.json node/step counts disagree with its config".into()));
    }
    Ok(meta)
}

/// Loads an episode directory; `states.csv` is optional.
pub fn read_episode(dir: &Path) -> Result<Episode> {
    let meta = read_episode_meta(dir)?;
    let topology = GraphTopology::from_edges(meta.n_nodes, &meta.edges)?;
    let inputs = read_signal_csv(&dir.join("inputs.csv"), meta.steps, meta.n_nodes)?;
    let outputs = read_signal_csv(&dir.join("outputs.csv"), meta.steps, meta.n_nodes)?;
    let states_path = dir.join("states.csv");
    let states = if states_path.exists() {
        Some(read_signal_csv(&states_path, meta.steps, meta.n_nodes)?)
    } else {
        None
    };
    Ok(Episode {
        config: meta.config,
        topology,
        inputs,
        states,
        outputs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentParams {
    pub encoder: Vec<f64>,
    pub transition: Vec<f64>,
    pub readout: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub family: ModelFamily,
    pub dims: Dims,
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// Hidden width for STGNN models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_st: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_ro: Option<Activation>,
    pub params: ComponentParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Checkpoint {
    pub fn from_model(model: &AnyModel, train_config: Option<TrainConfig>, seed: Option<u64>) -> Self {
        let p = model.params();
        let [a, b, _] = model.param_blocks();
        let (hidden, rho_st, rho_ro) = match model {
            AnyModel::Replica(r) => {
                let rp = r.replica_params();
                (None, Some(rp.rho_st), Some(rp.rho_ro))
            }
            AnyModel::Stgnn(s) => (Some(s.hidden()), None, None),
            AnyModel::LinearAdjacency(_) => (None, None, None),
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            family: model.family(),
            dims: model.dims(),
            n_nodes: model.n_nodes(),
            edges: model.topology().edges(),
            hidden,
            rho_st,
            rho_ro,
            params: ComponentParams {
                encoder: p[..a].to_vec(),
                transition: p[a..a + b].to_vec(),
                readout: p[a + b..].to_vec(),
            },
            train_config,
            seed,
        }
    }

    pub fn to_model(&self) -> Result<AnyModel> {
        check_version(self.format_version, "checkpoint")?;
        let topology = GraphTopology::from_edges(self.n_nodes, &self.edges)?;
        let mut model: AnyModel = match self.family {
            ModelFamily::Replica => {
                let (Some(rho_st), Some(rho_ro)) = (self.rho_st, self.rho_ro) else {
                    return Err(Error::Data("replica checkpoint needs rho_st and rho_ro".into()));
                };
                Replica::new(
                    topology,
                    ReplicaParams {
                        theta_tm: 0.0,
                        theta_sp: 0.0,
                        psi0: 0.0,
                        psi1: 0.0,
                        rho_st,
                        rho_ro,
                    },
                )
                .into()
            }
            ModelFamily::Stgnn => {
                let hidden = self
                    .hidden
                    .ok_or_else(|| Error::Data("stgnn checkpoint needs hidden".into()))?;
                Stgnn::zeros(topology, hidden).into()
            }
            ModelFamily::LinearAdjacency => LinearAdjacency::new(topology, 0.0, 0.0, 0.0, 0.0).into(),
        };
        if model.dims() != self.dims {
            return Err(Error::Data(format!(
                "checkpoint dims {:?} do not match the {} family {:?}",
                self.dims,
                self.family,
                model.dims()
            )));
        }
        let blocks = model.param_blocks();
        let got = [
            self.params.encoder.len(),
            self.params.transition.len(),
            self.params.readout.len(),
        ];
        if blocks != got {
            return Err(Error::Data(format!(
                "checkpoint parameter blocks {got:?}, expected {blocks:?}"
            )));
        }
        let flat: Vec<f64> = self
            .params
            .encoder
            .iter()
            .chain(&self.params.transition)
            .chain(&self.params.readout)
            .copied()
            .collect();
        model.set_params(&flat)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        check_version(ck.format_version, "checkpoint")?;
        Ok(ck)
    }
}
