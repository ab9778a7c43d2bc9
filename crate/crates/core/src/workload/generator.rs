use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::engine::{ScaleConfig, ACCOUNTS_PER_BRANCH, BRANCH_RADIX, TELLERS_PER_BRANCH};
use crate::money::Money;

/// Half-width of the amount range: amounts lie in [-$500, +$500).
pub const MAX_AMOUNT_MICROS: i64 = 500_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixParams {
    pub local_fraction: f64,
    pub tellers_per_branch: u32,
    pub accounts_per_branch: u32,
    pub branch_radix: u64,
    pub rng_seed: u64,
}

impl Default for MixParams {
    fn default() -> Self {
        MixParams {
            local_fraction: 0.85,
            tellers_per_branch: TELLERS_PER_BRANCH,
            accounts_per_branch: ACCOUNTS_PER_BRANCH,
            branch_radix: BRANCH_RADIX,
            rng_seed: 0,
        }
    }
}

impl MixParams {
    pub fn for_config(config: &ScaleConfig, seed: u64) -> Self {
        MixParams {
            tellers_per_branch: config.tellers_per_branch,
            accounts_per_branch: config.accounts_per_branch,
            branch_radix: config.branch_radix,
            rng_seed: seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.local_fraction) {
            return Err(format!("local fraction {} outside [0, 1]", self.local_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnRequest {
    pub teller_id: u64,
    pub account_id: u64,
    pub amount: Money,
}

/// A request plus which arm of the locality test produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub request: TxnRequest,
    /// The account was drawn from the teller's branch on purpose. Remote
    /// draws may still land there.
    pub local_draw: bool,
}

/// PCG-64 (XSL-RR 128/64) seeded with `seed_from_u64`; one independent
/// stream per index via `seed ^ stream`.
#[derive(Debug, Clone)]
pub struct WorkloadRng(Pcg64);

impl WorkloadRng {
    pub fn new(seed: u64) -> Self {
        WorkloadRng(Pcg64::seed_from_u64(seed))
    }

    pub fn for_stream(seed: u64, stream: u64) -> Self {
        Self::new(seed ^ stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// floor(u * n), which is always < n.
    fn below(&mut self, n: u64) -> u64 {
        ((self.uniform() * n as f64) as u64).min(n.saturating_sub(1))
    }
}

/// One DebitCredit request, drawing uniforms in this order: branch, teller
/// sequence, locality test, [remote branch], account sequence, amount.
pub fn gen_draw(rng: &mut WorkloadRng, mix: &MixParams, branches: u32) -> Draw {
    let branches = branches.max(1) as u64;
    let radix = mix.branch_radix;
    let branch = rng.below(branches);
    let teller_id = branch * radix + rng.below(mix.tellers_per_branch as u64);
    let local_draw = rng.uniform() >= 1.0 - mix.local_fraction;
    let account_branch = if local_draw { branch } else { rng.below(branches) };
    let account_id = account_branch * radix + rng.below(mix.accounts_per_branch as u64);
    let span = 2 * MAX_AMOUNT_MICROS as u64;
    let amount = Money::from_micros(rng.below(span) as i64 - MAX_AMOUNT_MICROS);
    Draw { request: TxnRequest { teller_id, account_id, amount }, local_draw }
}

pub fn gen_request(rng: &mut WorkloadRng, mix: &MixParams, branches: u32) -> TxnRequest {
    gen_draw(rng, mix, branches).request
}

/// Endless request stream for one workload stream.
#[derive(Debug, Clone)]
pub struct RequestGenerator {
    rng: WorkloadRng,
    mix: MixParams,
    branches: u32,
}

impl RequestGenerator {
    pub fn new(mix: MixParams, branches: u32, stream: u64) -> Self {
        RequestGenerator { rng: WorkloadRng::for_stream(mix.rng_seed, stream), mix, branches }
    }
}

impl Iterator for RequestGenerator {
    type Item = TxnRequest;

    fn next(&mut self) -> Option<TxnRequest> {
        Some(gen_request(&mut self.rng, &self.mix, self.branches))
    }
}
