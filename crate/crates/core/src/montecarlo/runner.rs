use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::accumulator::{MomentAccumulator, TrackingConfig};
use super::realization::run_realization;
use crate::error::{Error, Result};
use crate::spectra::{BareSpectrum, InteractionSpec};
use crate::table::write_atomic;

const CHECKPOINT_MAGIC: &str = "OVLCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Everything that determines the realization stream and the tracked statistics.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub spectrum: BareSpectrum,
    pub interaction: InteractionSpec,
    pub master_seed: u64,
    pub tracking: TrackingConfig,
    /// Realizations per canonical reduction block.
    pub block_size: u64,
}

#[derive(Serialize)]
struct HashView<'a> {
    version: u32,
    spectrum: String,
    interaction: &'a InteractionSpec,
    master_seed: u64,
    tracking: &'a TrackingConfig,
    block_size: u64,
}

impl McConfig {
    pub fn new(
        spectrum: BareSpectrum,
        interaction: InteractionSpec,
        master_seed: u64,
        tracking: TrackingConfig,
    ) -> Self {
        McConfig {
            spectrum,
            interaction,
            master_seed,
            tracking,
            block_size: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tracking.n != self.spectrum.len() {
            return Err(Error::Config(format!(
                "tracking dimension {} differs from spectrum length {}",
                self.tracking.n,
                self.spectrum.len()
            )));
        }
        if self.block_size == 0 {
            return Err(Error::Config("block_size must be >= 1".into()));
        }
        self.tracking.validate()
    }

    /// SHA-256 over a canonical JSON rendering of the configuration.
    pub fn hash(&self) -> String {
        let view = HashView {
            version: CHECKPOINT_VERSION,
            spectrum: self.spectrum.content_hash(),
            interaction: &self.interaction,
            master_seed: self.master_seed,
            tracking: &self.tracking,
            block_size: self.block_size,
        };
        let bytes = serde_json::to_vec(&view).expect("configuration serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunState {
    format: u32,
    config_hash: String,
    next_index: u64,
    failures: u64,
    failed_indices: Vec<u64>,
    max_unitarity_defect: f64,
    /// Left fold of every sealed block, in index order.
    committed: MomentAccumulator,
    /// Sequential accumulation of the current partial block.
    open: MomentAccumulator,
}

const MAX_RECORDED_FAILURES: usize = 100;

struct BlockOutcome {
    acc: MomentAccumulator,
    failures: Vec<u64>,
    max_defect: f64,
}

/// A resumable Monte Carlo run.
///
/// Realizations are grouped into blocks of `block_size` consecutive indices.
/// A block is always accumulated sequentially and sealed blocks are merged
/// in index order, so every statistic depends only on the configuration and
/// the number of realizations, never on thread count or checkpoint position.
#[derive(Debug, Clone)]
pub struct MonteCarlo {
    config: McConfig,
    state: RunState,
}

impl MonteCarlo {
    pub fn new(config: McConfig) -> Result<Self> {
        config.validate()?;
        let empty = MomentAccumulator::new(&config.tracking)?;
        let state = RunState {
            format: CHECKPOINT_VERSION,
            config_hash: config.hash(),
            next_index: 0,
            failures: 0,
            failed_indices: Vec::new(),
            max_unitarity_defect: 0.0,
            committed: empty.clone(),
            open: empty,
        };
        Ok(MonteCarlo { config, state })
    }

    pub fn config(&self) -> &McConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.state.config_hash
    }

    /// Realization indices consumed so far, including failures.
    pub fn next_index(&self) -> u64 {
        self.state.next_index
    }

    pub fn failures(&self) -> u64 {
        self.state.failures
    }

    pub fn failed_indices(&self) -> &[u64] {
        &self.state.failed_indices
    }

    /// Largest unitarity defect seen in any realization.
    pub fn max_unitarity_defect(&self) -> f64 {
        self.state.max_unitarity_defect
    }

    /// Current estimates: all sealed blocks plus the open partial block.
    pub fn snapshot(&self) -> MomentAccumulator {
        let mut acc = self.state.committed.clone();
        acc.merge(&self.state.open)
            .expect("open and committed blocks share tracking");
        acc
    }

    fn run_range(&self, start: u64, end: u64, mut acc: MomentAccumulator) -> BlockOutcome {
        let mut failures = Vec::new();
        let mut max_defect: f64 = 0.0;
        for index in start..end {
            match run_realization(
                &self.config.spectrum,
                &self.config.interaction,
                index,
                self.config.master_seed,
            ) {
                Ok(r) => {
                    max_defect = max_defect.max(r.unitarity_defect());
                    acc.accumulate(&r).expect("dimensions validated at construction");
                }
                Err(_) => failures.push(index),
            }
        }
        BlockOutcome {
            acc,
            failures,
            max_defect,
        }
    }

    fn absorb_stats(&mut self, failures: &[u64], max_defect: f64) {
        self.state.failures += failures.len() as u64;
        for &f in failures {
            if self.state.failed_indices.len() < MAX_RECORDED_FAILURES {
                self.state.failed_indices.push(f);
            }
        }
        self.state.max_unitarity_defect = self.state.max_unitarity_defect.max(max_defect);
    }

    /// Advances the open block sequentially up to `end` (not past its boundary).
    fn advance_open(&mut self, end: u64) {
        let b = self.config.block_size;
        let start = self.state.next_index;
        let boundary = (start / b + 1) * b;
        let stop = end.min(boundary);
        if stop <= start {
            return;
        }
        let open = std::mem::replace(
            &mut self.state.open,
            MomentAccumulator::new(&self.config.tracking).expect("validated tracking"),
        );
        let out = self.run_range(start, stop, open);
        self.absorb_stats(&out.failures, out.max_defect);
        self.state.next_index = stop;
        if stop == boundary {
            let mut block = out.acc;
            block.seal();
            self.state.committed.merge(&block).expect("same tracking");
        } else {
            self.state.open = out.acc;
        }
    }

    /// Runs `additional` more realizations on `threads` worker threads.
    pub fn run(&mut self, additional: u64, threads: usize) -> Result<()> {
        let target = self.state.next_index + additional;
        let b = self.config.block_size;
        if !self.state.next_index.is_multiple_of(b) {
            self.advance_open(target);
        }
        let full_end = target / b * b;
        if self.state.next_index < full_end {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            let batch = (threads.max(1) * 4) as u64;
            while self.state.next_index < full_end {
                let first = self.state.next_index / b;
                let last = (first + batch).min(full_end / b);
                let outcomes: Vec<BlockOutcome> = pool.install(|| {
                    (first..last)
                        .into_par_iter()
                        .map(|blk| {
                            let acc = MomentAccumulator::new(&self.config.tracking)
                                .expect("validated tracking");
                            let mut out = self.run_range(blk * b, (blk + 1) * b, acc);
                            out.acc.seal();
                            out
                        })
                        .collect()
                });
                for out in outcomes {
                    self.absorb_stats(&out.failures, out.max_defect);
                    self.state.committed.merge(&out.acc)?;
                }
                self.state.next_index = last * b;
            }
        }
        if self.state.next_index < target {
            self.advance_open(target);
        }
        Ok(())
    }

    /// Writes a self-checking snapshot of the run state.
    pub fn checkpoint(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(&self.state)
            .map_err(|e| Error::Integrity(format!("serialize checkpoint: {e}")))?;
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        let text = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION} {digest}\n{body}");
        write_atomic(path, text.as_bytes())
    }

    /// Restores a run; the checkpoint must have been written for an identical configuration.
    pub fn restore(config: McConfig, path: &Path) -> Result<Self> {
        config.validate()?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Integrity("checkpoint is not UTF-8".into()))?;
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::Integrity("missing checkpoint header".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 3 || fields[0] != CHECKPOINT_MAGIC {
            return Err(Error::Integrity(format!("bad checkpoint header {header:?}")));
        }
        if fields[1] != format!("v{CHECKPOINT_VERSION}") {
            return Err(Error::Integrity(format!("unsupported checkpoint version {}", fields[1])));
        }
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        if digest != fields[2] {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        let state: RunState = serde_json::from_str(body)
            .map_err(|e| Error::Integrity(format!("malformed checkpoint body: {e}")))?;
        let expected = config.hash();
        if state.config_hash != expected {
            return Err(Error::IncompatibleCheckpoint {
                expected,
                found: state.config_hash,
            });
        }
        Ok(MonteCarlo { config, state })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{make_gaussian_spectrum, Ensemble};
    use num_complex::Complex64;

    fn config(n: usize, block: u64) -> McConfig {
        let spectrum = make_gaussian_spectrum(n, 1.0, 3).unwrap();
        let interaction = InteractionSpec::new(Ensemble::Gue, 0.4).unwrap();
        let mut tracking = TrackingConfig::second_moments_only(n);
        tracking.cyclic_pairs.push((1, n - 2));
        tracking.factorized_pairs.push((0, 3));
        tracking.probes.push(super::super::GreenProbe::extradiag(
            1,
            2,
            Complex64::new(0.0, 0.1),
            Complex64::new(0.0, -0.1),
        ));
        let mut c = McConfig::new(spectrum, interaction, 17, tracking);
        c.block_size = block;
        c
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let mut a = MonteCarlo::new(config(8, 5)).unwrap();
        a.run(37, 1).unwrap();
        let mut b = MonteCarlo::new(config(8, 5)).unwrap();
        b.run(37, 3).unwrap();
        assert_eq!(a.snapshot(), b.snapshot());
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn split_runs_match_single_run() {
        let mut whole = MonteCarlo::new(config(8, 5)).unwrap();
        whole.run(43, 2).unwrap();
        let mut parts = MonteCarlo::new(config(8, 5)).unwrap();
        for chunk in [3, 9, 1, 20, 10] {
            parts.run(chunk, 2).unwrap();
        }
        assert_eq!(whole.state, parts.state);
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let mut first = MonteCarlo::new(config(8, 5)).unwrap();
        first.run(12, 1).unwrap();
        first.checkpoint(&path).unwrap();
        let mut resumed = MonteCarlo::restore(config(8, 5), &path).unwrap();
        assert_eq!(resumed.state, first.state);
        resumed.run(12, 2).unwrap();
        let mut single = MonteCarlo::new(config(8, 5)).unwrap();
        single.run(24, 1).unwrap();
        assert_eq!(resumed.state, single.state);
    }

    #[test]
    fn checkpoint_rejects_other_config_and_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let mut mc = MonteCarlo::new(config(8, 5)).unwrap();
        mc.run(6, 1).unwrap();
        mc.checkpoint(&path).unwrap();
        let mut other = config(8, 5);
        other.master_seed += 1;
        assert!(matches!(
            MonteCarlo::restore(other, &path),
            Err(Error::IncompatibleCheckpoint { .. })
        ));
        let mut bytes = std::fs::read(&path).unwrap();
        let k = bytes.len() / 2;
        bytes[k] = if bytes[k] == b'1' { b'2' } else { b'1' };
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            MonteCarlo::restore(config(8, 5), &path),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn unitarity_is_tracked() {
        let mut mc = MonteCarlo::new(config(16, 4)).unwrap();
        mc.run(10, 1).unwrap();
        assert!(mc.max_unitarity_defect() < 1e-10);
        assert_eq!(mc.failures(), 0);
        assert_eq!(mc.snapshot().count(), 10);
    }
}
