//! Command-line runner and HTTP gateway for the simulator.

pub mod gateway;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use cbdc_core::ledger::{read_jsonl, verify_chain, write_jsonl, PersistError};
use cbdc_core::Digest;
use cbdc_sim::Harness;

/// Persists the ledger of `h` as JSONL and checks the file replays to the
/// same head digest.
pub fn save_ledger(h: &Harness, path: &Path) -> Result<Digest, PersistError> {
    write_jsonl(h.sequencer().entries(), path)?;
    let head = replay(path)?;
    debug_assert_eq!(head, h.sequencer().ledger_digest());
    Ok(head)
}

/// One AML row per line, across every bank.
pub fn save_aml(h: &Harness, path: &Path) -> io::Result<usize> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for row in h.banks().iter().flat_map(|b| b.aml_log()) {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Re-verifies a persisted ledger and returns its head digest.
pub fn replay(path: &Path) -> Result<Digest, PersistError> {
    verify_chain(&read_jsonl(path)?)
}
