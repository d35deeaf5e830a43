use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ppre_core::bisg::{bisg_posterior, brute_force_posterior, CensusTables, JointTable, MemberIdentity};
use ppre_core::census::generate_synthetic_census;
use ppre_core::crypto::{hash_to_group, ComKey, SessionSalt};
use ppre_core::estimators::{AggregateReport, EstimatorSpec, MetricDescriptor};
use ppre_core::privatizer::{clip_record, compute_clip_threshold, randomized_response, ClipParams, DpConfig, SelfIdRecord};
use ppre_core::protocol::wire::{decode_race_fixed, encode_race, race_fixed_to_vector};
use ppre_core::transport::{BatchEnvelope, Direction};
use ppre_core::{ProbVector, RaceCategory, K};

fn prob_vector() -> impl Strategy<Value = ProbVector> {
    prop::array::uniform6(0.0f64..1.0).prop_filter_map("positive mass", |w| {
        let w = w.map(|x| x * x * x + 1e-9);
        ProbVector::normalized(w).ok()
    })
}

proptest! {
    #[test]
    fn clipping_stays_on_the_simplex_below_threshold(v in prob_vector(), t in 0.2f64..0.99, seed: u64) {
        let params = ClipParams::with_threshold(t).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let c = clip_record(&v, &params, &mut rng).unwrap();
        prop_assert!(c.max() < t);
        prop_assert!((c.as_array().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(c.as_array().iter().all(|x| *x >= 0.0));
        if v.max() < t {
            prop_assert_eq!(c, v);
        }
    }

    #[test]
    fn threshold_is_one_of_the_maxima(rows in prop::collection::vec(prob_vector(), 1..200), q in 0.01f64..0.99) {
        let t = compute_clip_threshold(&rows, q).unwrap();
        let below = rows.iter().filter(|r| r.max() <= t).count();
        prop_assert!(rows.iter().any(|r| r.max() == t));
        prop_assert!(below as f64 >= q * rows.len() as f64 - 1e-9);
    }

    #[test]
    fn randomized_response_is_deterministic_per_stream(seed: u64, c in 0usize..K, eps in 0.0f64..10.0) {
        let rec = SelfIdRecord::new("m", RaceCategory::ALL[c]);
        let cfg = DpConfig::new(eps, 0).unwrap();
        let a = randomized_response(&rec, &cfg, &mut ChaCha20Rng::seed_from_u64(seed));
        let b = randomized_response(&rec, &cfg, &mut ChaCha20Rng::seed_from_u64(seed));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn race_payload_round_trips(v in prob_vector()) {
        let q = decode_race_fixed(&encode_race(&v)).unwrap();
        let back = race_fixed_to_vector(&q).unwrap();
        for j in 0..K {
            prop_assert!((back.as_array()[j] - v.as_array()[j]).abs() < 2e-15);
        }
    }

    #[test]
    fn envelopes_round_trip(records in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 0..20), p1: bool) {
        let env = BatchEnvelope {
            session_id: "sess-1".into(),
            name: "p1_encrypted".into(),
            direction: if p1 { Direction::P1ToP2 } else { Direction::P2ToP1 },
            records,
        };
        let bytes = env.encode();
        prop_assert_eq!(BatchEnvelope::decode(&bytes).unwrap(), env);
        let mut flipped = bytes.clone();
        let i = flipped.len() / 2;
        flipped[i] ^= 1;
        prop_assert!(BatchEnvelope::decode(&flipped).is_err());
    }

    #[test]
    fn report_text_round_trips(means in prop::array::uniform6(prop::option::of(-5.0f64..5.0)), n in 1u64..1_000_000) {
        let spec = EstimatorSpec::model_perf(MetricDescriptor::SquaredError);
        let r = AggregateReport::means(&spec, means, n).with_meta("session_id", "abc");
        prop_assert_eq!(AggregateReport::from_text(&r.to_text()).unwrap(), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn commutative_encryption_commutes_and_inverts(seed: u64, id in "[a-z0-9]{1,24}") {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let salt = SessionSalt::generate(&mut rng);
        let (k1, k2) = (ComKey::generate(&mut rng), ComKey::generate(&mut rng));
        let m = hash_to_group(&salt, id.as_bytes()).unwrap();
        let ab = k1.encrypt(&k2.encrypt(&m));
        prop_assert_eq!(ab, k2.encrypt(&k1.encrypt(&m)));
        prop_assert_eq!(k1.decrypt(&k1.encrypt(&m)), m);
        prop_assert_eq!(hash_to_group(&salt, id.as_bytes()).unwrap(), m);
    }

    #[test]
    fn bisg_matches_enumeration(seed in 0u64..1000, s in 0usize..12, g in 0usize..9) {
        let census = generate_synthetic_census(seed, 12, 9, 0.4).unwrap();
        let joint = JointTable::from_factorized(&census.joint, false).unwrap();
        let tables = CensusTables::from(&census);
        let id = MemberIdentity {
            member_id: "q".into(),
            first_name: None,
            surname: census.joint.surnames[s].clone(),
            zcta: census.joint.zctas[g].clone(),
        };
        let a = bisg_posterior(&id, &tables);
        let b = brute_force_posterior(&id, &joint).unwrap();
        for j in 0..K {
            prop_assert!((a.as_array()[j] - b.as_array()[j]).abs() <= 1e-9);
        }
    }
}
