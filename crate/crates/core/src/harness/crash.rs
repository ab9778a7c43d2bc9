use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::plan::{CrashSpec, RunPlan, TxnReceipt};
use super::rig::{LogSpec, Rig, RigSpec};
use super::run::{run_with, Kill, RunOutcome};
use super::HarnessError;
use crate::engine::{Bank, ScaleConfig};
use crate::wal::{recover, Lsn, SimLogDevice, PAGE_HEADER_LEN, PAGE_SIZE};
use crate::workload::WorkloadRng;

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Log bytes that survived.
    pub surviving_bytes: u64,
    pub submitted: usize,
    pub acknowledged: usize,
    pub recovered: usize,
    pub passed: bool,
    pub transcript: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrashVerdict {
    pub spec: CrashSpec,
    pub trials: Vec<TrialResult>,
}

impl CrashVerdict {
    pub fn passed(&self) -> bool {
        self.trials.iter().all(|t| t.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TrialResult> {
        self.trials.iter().filter(|t| !t.passed)
    }
}

/// Runs `plan` `trials` times on fresh rigs built from `rig`, crashes each
/// run per `crash`, recovers, and checks the recovered bank against the
/// receipts.
///
/// Truncation cuts a finished log, so the transactions that must survive
/// are exactly those whose commit record lies wholly before the cut. A kill
/// stops the device mid-run; everything acknowledged must survive and
/// nothing beyond what was submitted may appear.
pub fn crash_test(plan: &RunPlan, crash: CrashSpec, trials: usize, rig: &RigSpec) -> Result<CrashVerdict, HarnessError> {
    if !matches!(rig.log, LogSpec::Sim(_)) {
        return Err(HarnessError::Plan("crash tests need a simulated log device".into()));
    }
    let mut results = Vec::with_capacity(trials);
    for trial in 0..trials {
        let seed = plan.seed.wrapping_add(trial as u64);
        let plan = RunPlan { seed, ..plan.clone() };
        let built = Rig::build(rig)?;
        let kill = match crash {
            CrashSpec::KillAfterTxn(k) => Some(Kill::AfterTxn(k)),
            CrashSpec::KillAtTime(t) => Some(Kill::AtTime(t)),
            _ => None,
        };
        let outcome = run_with(&plan, &built, kill)?;
        results.push(check_trial(trial, seed, crash, &built, &outcome, &plan)?);
    }
    Ok(CrashVerdict { spec: crash, trials: results })
}

fn check_trial(
    trial: usize,
    seed: u64,
    crash: CrashSpec,
    rig: &Rig,
    outcome: &RunOutcome,
    plan: &RunPlan,
) -> Result<TrialResult, HarnessError> {
    let sim = rig.sim_log.as_ref().expect("checked by crash_test");
    let cfg = *rig.config();
    let mut log = sim.contents();
    let receipts = &outcome.receipts;
    let by_lsn: HashMap<Lsn, &TxnReceipt> =
        receipts.iter().filter(|r| r.commit_lsn != 0).map(|r| (r.commit_lsn, r)).collect();
    let acked: BTreeSet<Lsn> = receipts.iter().filter(|r| r.is_committed()).map(|r| r.commit_lsn).collect();
    let submitted: BTreeSet<Lsn> = by_lsn.keys().copied().collect();
    let mut problems = Vec::new();

    let cut = match crash {
        CrashSpec::TruncateLogAtByte(n) => Some(n.min(log.len() as u64)),
        CrashSpec::TruncateLogAtRandomByte => {
            let mut rng = WorkloadRng::for_stream(seed, 0xC0FFEE);
            Some(((rng.uniform() * (log.len() + 1) as f64) as u64).min(log.len() as u64))
        }
        CrashSpec::KillAfterTxn(_) | CrashSpec::KillAtTime(_) => None,
    };
    // A truncated log is recovered on its own; a killed run also gets the
    // image that was installed when the device died.
    let durable: Option<BTreeSet<Lsn>> = cut.map(|c| {
        let ends = commit_ends(&log);
        log.truncate(c as usize);
        ends.into_iter().filter(|&(_, end)| end <= c).map(|(l, _)| l).collect()
    });
    let image = match cut {
        Some(_) => None,
        None => rig.sim_data.as_ref().and_then(|d| d.image()),
    };
    let result = |recovered: usize, problems: Vec<String>| TrialResult {
        trial,
        seed,
        surviving_bytes: log.len() as u64,
        submitted: submitted.len(),
        acknowledged: acked.len(),
        recovered,
        passed: problems.is_empty(),
        transcript: problems,
    };
    let dev = SimLogDevice::from_bytes(log.clone(), sim.config());
    let recovered = match recover(&dev, image.as_deref(), &cfg) {
        Ok(r) => r,
        Err(e) => return Ok(result(0, vec![format!("recovery failed: {e}")])),
    };
    // Commits below the image's begin lsn come from the image, not the log.
    let begin = recovered.image.as_ref().map_or(0, |i| i.begin_lsn);
    let redone: BTreeSet<Lsn> = recovered.committed.iter().copied().collect();
    let mut present: BTreeSet<Lsn> = submitted.iter().copied().filter(|&l| l < begin).collect();
    present.extend(&redone);

    match &durable {
        Some(must) => {
            if &present != must {
                let lost: Vec<_> = must.difference(&present).collect();
                let extra: Vec<_> = present.difference(must).collect();
                problems.push(format!("cut {}: lost {lost:?}, past the cut {extra:?}", log.len()));
            }
        }
        None => {
            let lost: Vec<_> = acked.difference(&present).collect();
            if !lost.is_empty() {
                problems.push(format!("acknowledged commits lost: {lost:?}"));
            }
            let phantom: Vec<_> = present.difference(&submitted).collect();
            if !phantom.is_empty() {
                problems.push(format!("recovered commits never submitted: {phantom:?}"));
            }
            if let CrashSpec::KillAfterTxn(k) = crash {
                if (acked.len() as u64) < k.min(plan.total_txns()) {
                    problems.push(format!("only {} acknowledged before the kill at {k}", acked.len()));
                }
            }
        }
    }
    let txns: Vec<&TxnReceipt> = present.iter().filter_map(|l| by_lsn.get(l).copied()).collect();
    if txns.len() == present.len() {
        if let Some(diff) = state_diff(&recovered.bank, &cfg, &txns) {
            problems.push(diff);
        }
    }
    if !recovered.bank.read_snapshot().is_conserved() {
        problems.push("recovered bank is not conserved".into());
    }
    Ok(result(present.len(), problems))
}

/// Commit lsn and the byte offset just past its record, read straight off
/// the page layout.
pub fn commit_ends(log: &[u8]) -> Vec<(Lsn, u64)> {
    let mut out = Vec::new();
    for (p, page) in log.chunks(PAGE_SIZE).enumerate() {
        if page.len() < PAGE_HEADER_LEN || &page[..4] != b"MBLG" {
            break;
        }
        let payload_len = u16::from_le_bytes([page[12], page[13]]) as usize;
        let payload = &page[PAGE_HEADER_LEN..(PAGE_HEADER_LEN + payload_len).min(page.len())];
        let mut off = 0;
        while off + 2 <= payload.len() {
            let len = u16::from_le_bytes([payload[off], payload[off + 1]]) as usize;
            if len == 0 || off + len > payload.len() {
                break;
            }
            let rec = &payload[off..off + len];
            if rec[2] == 2 {
                let lsn = u64::from_le_bytes(rec[11..19].try_into().unwrap());
                out.push((lsn, (p * PAGE_SIZE + PAGE_HEADER_LEN + off + len) as u64));
            }
            off += len;
        }
    }
    out
}

/// Compares every balance and the history multiset with what replaying
/// `txns` on an empty bank gives.
pub fn state_diff(bank: &Bank, cfg: &ScaleConfig, txns: &[&TxnReceipt]) -> Option<String> {
    let mut branches: HashMap<u64, i64> = HashMap::new();
    let mut tellers: HashMap<u64, i64> = HashMap::new();
    let mut accounts: HashMap<u64, i64> = HashMap::new();
    let mut history: Vec<(u64, u64, i64)> = Vec::new();
    for r in txns {
        let q = r.request;
        let a = q.amount.micros();
        *branches.entry(q.teller_id / cfg.branch_radix).or_default() += a;
        *tellers.entry(q.teller_id).or_default() += a;
        *accounts.entry(q.account_id).or_default() += a;
        history.push((q.teller_id, q.account_id, a));
    }
    let check = |name: &str, rows: &mut dyn Iterator<Item = (u64, i64)>, want: &HashMap<u64, i64>| {
        let mut seen = 0;
        for (id, bal) in rows {
            let w = want.get(&id).copied().unwrap_or(0);
            if w != bal {
                return Some(format!("{name} {id}: recovered {bal}, expected {w}"));
            }
            seen += want.contains_key(&id) as usize;
        }
        (seen != want.len()).then(|| format!("{name}: {} expected rows missing", want.len() - seen))
    };
    check("branch", &mut bank.branches().map(|b| (b.branch_id, b.balance.micros())), &branches)
        .or_else(|| check("teller", &mut bank.tellers().map(|t| (t.teller_id, t.till.micros())), &tellers))
        .or_else(|| check("account", &mut bank.accounts().map(|a| (a.account_id, a.balance.micros())), &accounts))
        .or_else(|| {
            let mut got: Vec<_> =
                bank.history().iter().map(|h| (h.teller_id, h.account_id, h.amount.micros())).collect();
            got.sort_unstable();
            history.sort_unstable();
            (got != history).then(|| format!("history: {} rows recovered, {} expected", got.len(), history.len()))
        })
}
