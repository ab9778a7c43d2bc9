use serde::{Deserialize, Serialize};

use super::EngineError;

pub const TELLERS_PER_BRANCH: u32 = 10;
pub const ACCOUNTS_PER_BRANCH: u32 = 10_000;
/// Teller and account ids carry their branch in the "millions" digits.
pub const BRANCH_RADIX: u64 = 1_000_000;

/// Population shape of a bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub branches: u32,
    pub tellers_per_branch: u32,
    pub accounts_per_branch: u32,
    pub branch_radix: u64,
}

impl ScaleConfig {
    /// Standard DebitCredit ratios: 10 tellers and 10,000 accounts per branch.
    pub fn new(branches: u32) -> Self {
        ScaleConfig {
            branches,
            tellers_per_branch: TELLERS_PER_BRANCH,
            accounts_per_branch: ACCOUNTS_PER_BRANCH,
            branch_radix: BRANCH_RADIX,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.branch_radix <= self.accounts_per_branch as u64
            || self.branch_radix <= self.tellers_per_branch as u64
        {
            return Err(EngineError::RadixTooSmall {
                radix: self.branch_radix,
                per_branch: self.accounts_per_branch.max(self.tellers_per_branch),
            });
        }
        if (self.branches as u64).checked_mul(self.branch_radix).is_none() {
            return Err(EngineError::TooManyBranches(self.branches));
        }
        Ok(())
    }

    pub fn teller_count(&self) -> u64 {
        self.branches as u64 * self.tellers_per_branch as u64
    }

    pub fn account_count(&self) -> u64 {
        self.branches as u64 * self.accounts_per_branch as u64
    }

    pub fn branch_of(&self, id: u64) -> u64 {
        id / self.branch_radix
    }

    pub fn teller_id(&self, branch: u64, seq: u64) -> u64 {
        branch * self.branch_radix + seq
    }

    pub fn account_id(&self, branch: u64, seq: u64) -> u64 {
        branch * self.branch_radix + seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_radix_not_above_accounts() {
        let mut cfg = ScaleConfig::new(2);
        cfg.branch_radix = 10_000;
        assert!(matches!(cfg.validate(), Err(EngineError::RadixTooSmall { .. })));
        cfg.branch_radix = 10_001;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn radix_arithmetic() {
        let cfg = ScaleConfig::new(10);
        assert_eq!(cfg.branch_of(5_000_003), 5);
        assert_eq!(cfg.account_id(7, 9_999), 7_009_999);
    }
}
