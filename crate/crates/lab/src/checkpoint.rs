//! Trained allocators as a flat binary of shape-tagged `f64` arrays.
//!
//! ```text
//! magic    8 bytes  "SEMCKPT\0"
//! version  u32      1
//! count    u32      number of arrays
//! array    u32 rank, rank × u64 dims, then prod(dims) f64 values
//! ```
//!
//! All integers and floats are little-endian. Array 0 is the header
//! `[users, steps, beta_start, beta_end, token_scale, sync_period, layers]`;
//! then, for the policy, online critic 1 and 2, and target critic 1 and 2,
//! each layer's weight `[inputs, outputs]` (input-major) followed by its
//! bias `[outputs]`.

use std::fs;
use std::path::Path;

use semcom_core::add::nn::{Dense, Mlp};
use semcom_core::add::{AddAgent, Critic, DiffusionPolicy, NoiseSchedule, TwinCritics};

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"SEMCKPT\0";
pub const VERSION: u32 = 1;

/// One shape-tagged array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

pub fn encode_arrays(arrays: &[Array]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
        for d in &a.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.at..self.at.checked_add(n)?)?;
        self.at += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_arrays(bytes: &[u8]) -> std::result::Result<Vec<Array>, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8) != Some(&MAGIC[..]) {
        return Err("not a checkpoint (bad magic)".into());
    }
    match r.u32() {
        Some(VERSION) => {}
        Some(v) => return Err(format!("unsupported checkpoint version {v}")),
        None => return Err("truncated header".into()),
    }
    let count = r.u32().ok_or("truncated header")?;
    let mut arrays = Vec::new();
    for k in 0..count {
        let truncated = || format!("array {k} is truncated");
        let rank = r.u32().ok_or_else(truncated)?;
        let dims = (0..rank)
            .map(|_| r.u64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let len = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| format!("array {k} is too large"))?;
        let raw = r
            .take(len.checked_mul(8).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(Array { dims, data });
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok(arrays)
}

fn push_net(arrays: &mut Vec<Array>, net: &Mlp) {
    for l in &net.layers {
        arrays.push(Array {
            dims: vec![l.inputs as u64, l.outputs as u64],
            data: l.weight.clone(),
        });
        arrays.push(Array {
            dims: vec![l.outputs as u64],
            data: l.bias.clone(),
        });
    }
}

pub fn agent_to_arrays(agent: &AddAgent) -> Vec<Array> {
    let p = &agent.policy;
    let steps = p.schedule.steps();
    let header = vec![
        p.users as f64,
        steps as f64,
        p.schedule.beta(1),
        p.schedule.beta(steps),
        agent.token_scale,
        agent.critics.sync_period as f64,
        p.net.layers.len() as f64,
    ];
    let mut arrays = vec![Array {
        dims: vec![header.len() as u64],
        data: header,
    }];
    push_net(&mut arrays, &p.net);
    for c in agent.critics.online.iter().chain(&agent.critics.target) {
        push_net(&mut arrays, &c.net);
    }
    arrays
}

pub fn agent_from_arrays(arrays: &[Array]) -> std::result::Result<AddAgent, String> {
    let header = arrays.first().ok_or("no header array")?;
    if header.dims != [7] {
        return Err("header must be a 7-element array".into());
    }
    let h = &header.data;
    let as_count = |v: f64, name: &str| {
        if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
            Ok(v as usize)
        } else {
            Err(format!("header {name} = {v} is not a positive integer"))
        }
    };
    let users = as_count(h[0], "users")?;
    let steps = as_count(h[1], "steps")?;
    let sync_period = as_count(h[5], "sync_period")?;
    let layers = as_count(h[6], "layers")?;
    let schedule = NoiseSchedule::linear(steps, h[2], h[3]).map_err(|e| e.to_string())?;
    if arrays.len() != 1 + 5 * 2 * layers {
        return Err(format!("expected {} arrays, found {}", 1 + 10 * layers, arrays.len()));
    }
    let mut rest = arrays[1..].chunks_exact(2 * layers);
    let mut next_net = |what: &str| -> std::result::Result<Mlp, String> {
        let chunk = rest.next().expect("array count checked above");
        let mut net = Vec::with_capacity(layers);
        for (k, pair) in chunk.chunks_exact(2).enumerate() {
            let (w, b) = (&pair[0], &pair[1]);
            let (inputs, outputs) = match w.dims[..] {
                [i, o] => (i as usize, o as usize),
                _ => return Err(format!("{what} layer {k}: weight must be 2-D")),
            };
            if b.dims != [outputs as u64] {
                return Err(format!("{what} layer {k}: bias shape does not match weight"));
            }
            if let Some(prev) = net.last().map(|d: &Dense| d.outputs) {
                if prev != inputs {
                    return Err(format!("{what} layer {k}: {inputs} inputs after {prev} outputs"));
                }
            }
            net.push(Dense {
                inputs,
                outputs,
                weight: w.data.clone(),
                bias: b.data.clone(),
            });
        }
        Ok(Mlp { layers: net })
    };
    let policy_net = next_net("policy")?;
    let critic_nets = [
        next_net("critic 1")?,
        next_net("critic 2")?,
        next_net("target 1")?,
        next_net("target 2")?,
    ];
    let feature_len = semcom_core::add::AllocState::feature_len(users);
    if policy_net.inputs() != users + semcom_core::add::diffusion::TIME_DIM + feature_len
        || policy_net.outputs() != users
    {
        return Err(format!("policy network shape does not fit {users} users"));
    }
    if critic_nets
        .iter()
        .any(|n| n.inputs() != users + feature_len || n.outputs() != 1)
    {
        return Err(format!("critic network shape does not fit {users} users"));
    }
    let [c1, c2, t1, t2] = critic_nets.map(|net| Critic { net });
    Ok(AddAgent {
        policy: DiffusionPolicy {
            net: policy_net,
            schedule,
            users,
        },
        critics: TwinCritics {
            online: [c1, c2],
            target: [t1, t2],
            sync_period,
            steps_since_sync: 0,
        },
        token_scale: h[4],
    })
}

pub fn save_agent(agent: &AddAgent, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_arrays(&agent_to_arrays(agent))).map_err(|e| LabError::io(path, e))
}

pub fn load_agent(path: impl AsRef<Path>) -> Result<AddAgent> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode_arrays(&bytes)
        .and_then(|a| agent_from_arrays(&a))
        .map_err(|reason| LabError::format(path, reason))
}
