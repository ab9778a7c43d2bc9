use minibank::engine::{Bank, ScaleConfig};
use minibank::money::Money;
use minibank::workload::{gen_draw, gen_request, MixParams, RequestGenerator, TxnRequest, WorkloadRng};
use proptest::prelude::*;

/// PCG-64 XSL-RR 128/64 written out from the published algorithm, seeded
/// the way `seed_from_u64` expands a u64 (eight PCG32 outputs).
struct RefPcg64 {
    state: u128,
    inc: u128,
}

impl RefPcg64 {
    const MUL: u128 = 0x2360_ED05_1FC6_5DA4_4385_DF64_9FCC_F645;

    fn seeded(mut s: u64) -> Self {
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(4) {
            s = s.wrapping_mul(0x5851_F42D_4C95_7F2D).wrapping_add(0xA176_54E4_6FBE_17F3);
            let x = ((((s >> 18) ^ s) >> 27) as u32).rotate_right((s >> 59) as u32);
            chunk.copy_from_slice(&x.to_le_bytes());
        }
        let word = |i: usize| u64::from_le_bytes(seed[i * 8..i * 8 + 8].try_into().unwrap()) as u128;
        let state = word(0) | word(1) << 64;
        let inc = (word(2) | word(3) << 64) | 1;
        let mut g = RefPcg64 { state: state.wrapping_add(inc), inc };
        g.step();
        g
    }

    fn step(&mut self) {
        self.state = self.state.wrapping_mul(Self::MUL).wrapping_add(self.inc);
    }

    fn next(&mut self) -> u64 {
        self.step();
        let s = self.state;
        (((s >> 64) as u64) ^ (s as u64)).rotate_right((s >> 122) as u32)
    }

    fn uniform(&mut self) -> f64 {
        (self.next() >> 11) as f64 / 9_007_199_254_740_992.0
    }
}

#[test]
fn reference_generator_matches_the_published_stream() {
    let mut ours = WorkloadRng::new(2024);
    let mut reference = RefPcg64::seeded(2024);
    for _ in 0..1_000 {
        assert_eq!(ours.next_u64(), reference.next());
    }
}

#[test]
fn first_three_requests_follow_the_formulas() {
    let branches = 1000u32;
    let mut u = RefPcg64::seeded(7);
    let mut expected = Vec::new();
    for _ in 0..3 {
        let branch = (u.uniform() * 1000.0) as u64;
        let teller = branch * 1_000_000 + (u.uniform() * 10.0) as u64;
        let account = if u.uniform() >= 0.15 {
            branch * 1_000_000 + (u.uniform() * 10_000.0) as u64
        } else {
            let b = (u.uniform() * 1000.0) as u64;
            b * 1_000_000 + (u.uniform() * 10_000.0) as u64
        };
        let amount = (u.uniform() * 1e9) as i64 - 500_000_000;
        expected.push(TxnRequest {
            teller_id: teller,
            account_id: account,
            amount: Money::from_micros(amount),
        });
    }
    let mix = MixParams { rng_seed: 7, ..Default::default() };
    let got: Vec<_> = RequestGenerator::new(mix, branches, 0).take(3).collect();
    assert_eq!(got, expected);
}

#[test]
fn locality_converges_to_the_self_collision_rate() {
    let branches = 1000u32;
    let n = 1_000_000u64;
    let mix = MixParams { rng_seed: 11, ..Default::default() };
    let mut rng = WorkloadRng::new(mix.rng_seed);
    let (mut same_branch, mut local_draws) = (0u64, 0u64);
    for _ in 0..n {
        let d = gen_draw(&mut rng, &mix, branches);
        same_branch += (d.request.teller_id / 1_000_000 == d.request.account_id / 1_000_000) as u64;
        local_draws += d.local_draw as u64;
    }
    let sigma = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
    let raw = local_draws as f64 / n as f64;
    assert!((raw - 0.85).abs() <= 4.0 * sigma(0.85), "{raw}");
    assert!((0.845..=0.855).contains(&raw));
    let p = 0.85 + 0.15 / branches as f64;
    let measured = same_branch as f64 / n as f64;
    assert!((measured - p).abs() <= 4.0 * sigma(p), "{measured} vs {p}");
}

#[test]
fn generated_ids_exist_in_a_bank_of_the_same_shape() {
    let cfg = ScaleConfig::new(37);
    let bank = Bank::create(cfg).unwrap();
    let mix = MixParams::for_config(&cfg, 5);
    for r in RequestGenerator::new(mix, cfg.branches, 3).take(50_000) {
        assert!(bank.teller(r.teller_id).is_some(), "{r:?}");
        assert!(bank.account(r.account_id).is_some(), "{r:?}");
    }
}

proptest! {
    #[test]
    fn amounts_stay_in_range(seed in any::<u64>(), branches in 1u32..2000) {
        let mut rng = WorkloadRng::new(seed);
        let mix = MixParams::default();
        for _ in 0..200 {
            let r = gen_request(&mut rng, &mix, branches);
            prop_assert!((-500_000_000..500_000_000).contains(&r.amount.micros()));
            prop_assert!(r.teller_id % 1_000_000 < 10);
            prop_assert!(r.account_id % 1_000_000 < 10_000);
            prop_assert!(r.teller_id / 1_000_000 < branches as u64);
            prop_assert!(r.account_id / 1_000_000 < branches as u64);
        }
    }

    #[test]
    fn same_seed_same_sequence(seed in any::<u64>(), stream in 0u64..64) {
        let mix = MixParams { rng_seed: seed, ..Default::default() };
        let a: Vec<_> = RequestGenerator::new(mix, 100, stream).take(20).collect();
        let b: Vec<_> = RequestGenerator::new(mix, 100, stream).take(20).collect();
        prop_assert_eq!(a, b);
    }
}
