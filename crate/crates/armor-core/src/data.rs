//! Offline dataset generation and the model fitting loss.
//!
//! Datasets are lists of `(s, a, r, s')` tuples. The default collection
//! scheme draws each `(s, a)` i.i.d. from the behavior occupancy by rolling
//! from the initial distribution and terminating each step with probability
//! `1 - gamma`; rewards and next states then follow the true model.

use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, TabularMdp};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Log-likelihoods of observed transitions with zero model probability are
/// clamped to `-ln(P_FLOOR)` so version-space thresholds stay finite.
pub const P_FLOOR: f64 = 1e-300;

/// One observed transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub sp: usize,
}

/// How `(s, a)` pairs are collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleScheme {
    /// Independent draws from the discounted occupancy of the behavior
    /// policy (geometric-horizon termination).
    OccupancyIid,
    /// Contiguous geometric-length trajectories, all visited transitions
    /// recorded until `n` are collected.
    Trajectory,
}

impl std::str::FromStr for SampleScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occupancy_iid" | "occupancy-iid" => Ok(Self::OccupancyIid),
            "trajectory" => Ok(Self::Trajectory),
            other => Err(Error::Parameter(format!("unknown sampling scheme '{other}'"))),
        }
    }
}

/// Provenance metadata stored with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub scheme: SampleScheme,
    pub behavior_id: String,
    pub n: usize,
}

/// An offline dataset plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks every index against the given shape.
    pub fn validate_for(&self, num_states: usize, num_actions: usize) -> Result<()> {
        for (i, t) in self.transitions.iter().enumerate() {
            if t.s >= num_states || t.sp >= num_states || t.a >= num_actions {
                return Err(Error::Data(format!(
                    "transition {i} indexes ({}, {}, {}) outside ({num_states}, {num_actions})",
                    t.s, t.a, t.sp
                )));
            }
        }
        Ok(())
    }
}

fn sample_categorical(rng: &mut ChaCha20Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Options controlling reward observation noise.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    /// Half-width of uniform additive reward noise; zero means rewards are
    /// observed exactly.
    pub reward_half_width: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { reward_half_width: 0.0 }
    }
}

/// Draws `n` transitions from the true model under the behavior policy.
///
/// `occupancy_iid` draws each `(s, a)` independently from the discounted
/// occupancy; `trajectory` records whole geometric-length episodes.
/// Identical inputs and seed produce identical datasets.
pub fn sample_dataset(
    m_true: &TabularMdp,
    mu: &PolicyTable,
    n: usize,
    seed: u64,
    scheme: SampleScheme,
) -> Result<Dataset> {
    sample_dataset_noisy(m_true, mu, n, seed, scheme, NoiseSpec::default())
}

/// [`sample_dataset`] with configurable reward observation noise.
pub fn sample_dataset_noisy(
    m_true: &TabularMdp,
    mu: &PolicyTable,
    n: usize,
    seed: u64,
    scheme: SampleScheme,
    noise: NoiseSpec,
) -> Result<Dataset> {
    if mu.probs.dim() != (m_true.num_states, m_true.num_actions) {
        return Err(Error::Shape("behavior policy does not match mdp".into()));
    }
    let s_count = m_true.num_states;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n);

    let observe = |s: usize, a: usize, rng: &mut ChaCha20Rng| -> Transition {
        let mut r = m_true.reward[[s, a]];
        if noise.reward_half_width > 0.0 {
            r += rng.gen_range(-noise.reward_half_width..=noise.reward_half_width);
        }
        let sp = sample_categorical(rng, (0..s_count).map(|x| m_true.transition[[s, a, x]]));
        Transition { s, a, r, sp }
    };

    match scheme {
        SampleScheme::OccupancyIid => {
            for _ in 0..n {
                let mut s = sample_categorical(&mut rng, m_true.initial_dist.iter().copied());
                let (s, a) = loop {
                    let a = sample_categorical(&mut rng, mu.probs.row(s).iter().copied());
                    if rng.gen::<f64>() < 1.0 - m_true.discount {
                        break (s, a);
                    }
                    s = sample_categorical(&mut rng, (0..s_count).map(|x| m_true.transition[[s, a, x]]));
                };
                transitions.push(observe(s, a, &mut rng));
            }
        }
        SampleScheme::Trajectory => {
            'outer: loop {
                let mut s = sample_categorical(&mut rng, m_true.initial_dist.iter().copied());
                loop {
                    if transitions.len() == n {
                        break 'outer;
                    }
                    let a = sample_categorical(&mut rng, mu.probs.row(s).iter().copied());
                    let t = observe(s, a, &mut rng);
                    transitions.push(t);
                    if rng.gen::<f64>() < 1.0 - m_true.discount {
                        break;
                    }
                    s = t.sp;
                }
                if transitions.len() == n {
                    break;
                }
            }
        }
    }

    Ok(Dataset {
        transitions,
        meta: DatasetMeta { seed, scheme, behavior_id: "behavior".into(), n },
    })
}

/// Model fitting loss
/// `sum_D [ -ln P_M(s'|s,a) + (R_M(s,a) - r)^2 / vmax^2 ]`.
///
/// A zero-probability observed transition contributes `-ln(1e-300)` instead
/// of infinity.
pub fn fit_loss(d: &Dataset, m: &TabularMdp, vmax: f64) -> Result<f64> {
    d.validate_for(m.num_states, m.num_actions)?;
    let mut total = 0.0;
    for t in &d.transitions {
        let p = m.transition[[t.s, t.a, t.sp]].max(P_FLOOR);
        let dr = m.reward[[t.s, t.a]] - t.r;
        total += -p.ln() + dr * dr / (vmax * vmax);
    }
    Ok(total)
}

/// Writes a dataset as JSON Lines: a metadata line then one transition per
/// line as `{"s":int,"a":int,"r":float,"sp":int}`.
pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    #[derive(Serialize)]
    struct MetaLine<'a> {
        meta: &'a DatasetMeta,
    }
    writeln!(w, "{}", serde_json::to_string(&MetaLine { meta: &d.meta })?)?;
    for t in &d.transitions {
        writeln!(w, "{}", serde_json::to_string(t)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]. Parse failures name the
/// offending line (1-based).
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    #[derive(Deserialize)]
    struct MetaLine {
        meta: DatasetMeta,
    }
    let meta = match lines.next() {
        None => return Err(Error::Parse { line: 1, msg: "missing metadata line".into() }),
        Some((_, line)) => {
            let line = line?;
            serde_json::from_str::<MetaLine>(&line)
                .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
                .meta
        }
    };

    let mut transitions = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
        transitions.push(t);
    }
    Ok(Dataset { transitions, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2, Array3};

    fn one_state_mdp() -> TabularMdp {
        TabularMdp::new(
            Array3::from_elem((1, 1, 1), 1.0),
            Array2::from_elem((1, 1), 0.7),
            0.9,
            Array1::from_vec(vec![1.0]),
        )
        .unwrap()
    }

    use crate::synth::random_mdp;

    #[test]
    fn empty_dataset() {
        let m = one_state_mdp();
        let mu = PolicyTable::uniform(1, 1);
        let d = sample_dataset(&m, &mu, 0, 1, SampleScheme::OccupancyIid).unwrap();
        assert!(d.is_empty());
        assert_eq!(fit_loss(&d, &m, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_state_transitions_are_identical() {
        let m = one_state_mdp();
        let mu = PolicyTable::uniform(1, 1);
        let d = sample_dataset(&m, &mu, 5, 3, SampleScheme::OccupancyIid).unwrap();
        assert_eq!(d.len(), 5);
        for t in &d.transitions {
            assert_eq!((t.s, t.a, t.sp), (0, 0, 0));
            assert_eq!(t.r, 0.7);
        }
    }

    #[test]
    fn empirical_frequencies_match_occupancy() {
        let m = random_mdp(11, 4, 2, 0.9);
        let mu = PolicyTable::uniform(4, 2);
        let exact = m.occupancy(&mu).unwrap();
        let n = 100_000usize;
        let d = sample_dataset(&m, &mu, n, 17, SampleScheme::OccupancyIid).unwrap();
        let mut counts = vec![0u64; 8];
        for t in &d.transitions {
            counts[t.s * 2 + t.a] += 1;
        }
        for s in 0..4 {
            for a in 0..2 {
                let p = exact.dist[[s, a]];
                let emp = counts[s * 2 + a] as f64 / n as f64;
                let se = (p * (1.0 - p) / n as f64).sqrt();
                assert!(
                    (emp - p).abs() <= 3.0 * se,
                    "cell ({s},{a}): exact {p}, empirical {emp}"
                );
            }
        }
    }

    #[test]
    fn fit_loss_perfect_model_is_zero() {
        // Deterministic model observed exactly: every log-prob is ln(1) and
        // every reward residual is zero.
        let m = crate::mdp::two_state_chain();
        let mu = PolicyTable::deterministic(&[0, 0], 2).unwrap();
        let d = sample_dataset(&m, &mu, 50, 5, SampleScheme::OccupancyIid).unwrap();
        assert_eq!(fit_loss(&d, &m, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn fit_loss_matches_hand_sum() {
        let m = random_mdp(23, 3, 2, 0.8);
        let d = Dataset {
            transitions: vec![
                Transition { s: 0, a: 1, r: 0.25, sp: 2 },
                Transition { s: 2, a: 0, r: 0.5, sp: 1 },
                Transition { s: 1, a: 1, r: 0.9, sp: 0 },
            ],
            meta: DatasetMeta { seed: 0, scheme: SampleScheme::OccupancyIid, behavior_id: "x".into(), n: 3 },
        };
        let vmax = 2.0;
        let mut expect = 0.0;
        for t in &d.transitions {
            expect += -(m.transition[[t.s, t.a, t.sp]]).ln();
            expect += (m.reward[[t.s, t.a]] - t.r).powi(2) / (vmax * vmax);
        }
        let got = fit_loss(&d, &m, vmax).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn fit_loss_rejects_out_of_range_indices() {
        let m = one_state_mdp();
        let d = Dataset {
            transitions: vec![Transition { s: 3, a: 0, r: 0.0, sp: 0 }],
            meta: DatasetMeta { seed: 0, scheme: SampleScheme::OccupancyIid, behavior_id: "x".into(), n: 1 },
        };
        assert!(matches!(fit_loss(&d, &m, 1.0), Err(Error::Data(_))));
    }

    #[test]
    fn fit_loss_additive_over_concatenation() {
        let m = random_mdp(31, 3, 2, 0.8);
        let mu = PolicyTable::uniform(3, 2);
        let d1 = sample_dataset(&m, &mu, 40, 1, SampleScheme::OccupancyIid).unwrap();
        let d2 = sample_dataset(&m, &mu, 60, 2, SampleScheme::OccupancyIid).unwrap();
        let mut joined = d1.clone();
        joined.transitions.extend(d2.transitions.iter().copied());
        let m2 = random_mdp(32, 3, 2, 0.8);
        let a = fit_loss(&d1, &m2, 1.5).unwrap() + fit_loss(&d2, &m2, 1.5).unwrap();
        let b = fit_loss(&joined, &m2, 1.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = random_mdp(41, 4, 2, 0.9);
        let mu = PolicyTable::uniform(4, 2);
        for scheme in [SampleScheme::OccupancyIid, SampleScheme::Trajectory] {
            let d1 = sample_dataset(&m, &mu, 200, 9, scheme).unwrap();
            let d2 = sample_dataset(&m, &mu, 200, 9, scheme).unwrap();
            assert_eq!(d1, d2);
        }
    }

    #[test]
    fn trajectory_scheme_yields_n_transitions() {
        let m = random_mdp(43, 4, 2, 0.9);
        let mu = PolicyTable::uniform(4, 2);
        let d = sample_dataset(&m, &mu, 137, 3, SampleScheme::Trajectory).unwrap();
        assert_eq!(d.len(), 137);
    }

    #[test]
    fn roundtrip_save_load() {
        let m = random_mdp(51, 4, 2, 0.9);
        let mu = PolicyTable::uniform(4, 2);
        let d = sample_dataset(&m, &mu, 75, 13, SampleScheme::Trajectory).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error at line 1, got {other:?}"),
        }
    }

    #[test]
    fn negative_index_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"meta\":{\"seed\":0,\"scheme\":\"occupancy_iid\",\"behavior_id\":\"x\",\"n\":2}}\n\
             {\"s\":0,\"a\":0,\"r\":0.5,\"sp\":0}\n\
             {\"s\":-1,\"a\":0,\"r\":0.5,\"sp\":0}\n",
        )
        .unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error at line 3, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/nope.jsonl")),
            Err(Error::Io(_))
        ));
    }
}
