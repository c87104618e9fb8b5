//! Second, independently coded enumerator: recomputes every cost from the
//! closed-form definitions and enumerates decisions recursively.

use proptest::prelude::*;
use splitcvl::netmodel::{ChannelSpec, ChannelState, DeviceKind, DeviceProfile};
use splitcvl::nnprofile::{LayerProfile, ModelProfile};
use splitcvl::trico::{ConfEntry, ConfidentialityTable, PartitionDecision, Scenario, TriCoWeights};

#[derive(Debug, Clone)]
struct Dev {
    peak: f64,
    comp_w: f64,
    tx_w: f64,
    bw: f64,
    snr: f64,
}

#[derive(Debug, Clone)]
struct Instance {
    devs: Vec<Dev>,
    /// (flops, out_elements) per layer; every layer is a candidate.
    layers: Vec<(u64, u64)>,
    kl: Vec<(f64, f64)>,
    w: [f64; 3],
    alpha: f64,
    lambda: f64,
}

fn scale01(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    xs.iter()
        .map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Per-device effect of every cut. Comm and comp are min-max scaled per
/// device; the confidentiality cost is already in [0, 1] and is used as is.
fn effects(inst: &Instance) -> Vec<Vec<f64>> {
    let kl_max = inst.kl.iter().flat_map(|&(a, b)| [a, b]).fold(0.0, f64::max);
    let conf: Vec<f64> = inst
        .kl
        .iter()
        .map(|&(o, c)| {
            if kl_max == 0.0 {
                1.0
            } else {
                (1.0 - (inst.alpha * o + (1.0 - inst.alpha) * c) / kl_max).clamp(0.0, 1.0)
            }
        })
        .collect();
    inst.devs
        .iter()
        .map(|d| {
            let rate = d.bw * (1.0 + d.snr).log2();
            let mut lat = Vec::new();
            let mut en = Vec::new();
            let mut comp = Vec::new();
            let mut prefix = 0u64;
            for &(f, e) in &inst.layers {
                prefix += f;
                let t = (e * 4 * 8) as f64 / rate;
                lat.push(t);
                en.push(d.tx_w * t);
                comp.push(prefix as f64 / d.peak * d.comp_w);
            }
            let (lat, en, comp) = (scale01(&lat), scale01(&en), scale01(&comp));
            (0..inst.layers.len())
                .map(|i| {
                    let comm = inst.lambda * lat[i] + (1.0 - inst.lambda) * en[i];
                    inst.w[0] * comm + inst.w[1] * comp[i] + inst.w[2] * conf[i]
                })
                .collect()
        })
        .collect()
}

fn enumerate(table: &[Vec<f64>], prefix: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
    let d = prefix.len();
    if d == table.len() {
        let e = prefix.iter().zip(table).map(|(&c, t)| t[c]).sum::<f64>() / table.len() as f64;
        out.push((prefix.clone(), e));
        return;
    }
    for c in 0..table[d].len() {
        prefix.push(c);
        enumerate(table, prefix, out);
        prefix.pop();
    }
}

fn to_scenario(inst: &Instance) -> Scenario {
    let devices = inst
        .devs
        .iter()
        .enumerate()
        .map(|(i, d)| DeviceProfile::new(format!("d{i}"), DeviceKind::Uav, d.peak, d.comp_w, d.tx_w, None).unwrap())
        .collect();
    let channels = inst
        .devs
        .iter()
        .map(|d| ChannelSpec::Fixed(ChannelState::new(d.bw, d.snr).unwrap()))
        .collect();
    let layers: Vec<_> = inst
        .layers
        .iter()
        .enumerate()
        .map(|(i, &(f, e))| LayerProfile::new(format!("l{i}"), f, e, 4).unwrap())
        .collect();
    let n = layers.len();
    let profile = ModelProfile::new(layers, (0..n).collect(), None).unwrap();
    let conf = ConfidentialityTable::new(
        inst.kl
            .iter()
            .enumerate()
            .map(|(i, &(o, c))| ConfEntry::new(format!("l{i}"), o, c))
            .collect(),
    )
    .unwrap();
    let weights = TriCoWeights::new(inst.w[0], inst.w[1], inst.w[2], inst.alpha, inst.lambda).unwrap();
    Scenario::new(devices, channels, profile, conf, weights).unwrap()
}

fn instance() -> impl Strategy<Value = Instance> {
    let dev = (1e10f64..2e12, 1.0f64..50.0, 0.1f64..5.0, 1e5f64..5e7, 0.01f64..1000.0).prop_map(
        |(peak, comp_w, tx_w, bw, snr)| Dev {
            peak,
            comp_w,
            tx_w,
            bw,
            snr,
        },
    );
    (1usize..=5)
        .prop_flat_map(move |n| {
            (
                prop::collection::vec(dev.clone(), 1..=3),
                prop::collection::vec((0u64..1_000_000_000, 1u64..1_000_000), n),
                prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), n),
                (0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0),
                0.0f64..=1.0,
                0.0f64..=1.0,
            )
        })
        .prop_map(|(devs, layers, kl, (a, b, c), alpha, lambda)| {
            let s = a + b + c;
            let w = [a / s, b / s, 1.0 - a / s - b / s];
            Instance {
                devs,
                layers,
                kl,
                w,
                alpha,
                lambda,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn oracle_matches_second_enumerator(inst in instance()) {
        let sc = to_scenario(&inst);
        let res = sc.brute_force_optimal(&sc.expected_channels()).unwrap();
        let table = effects(&inst);
        let mut all = Vec::new();
        enumerate(&table, &mut Vec::new(), &mut all);
        prop_assert_eq!(res.evaluated, all.len());
        let min = all.iter().map(|(_, e)| *e).fold(f64::INFINITY, f64::min);
        prop_assert!((res.effect - min).abs() <= 1e-12, "oracle {} vs {}", res.effect, min);
        let cuts: Vec<usize> = res.decision.0.iter().map(|c| c.candidate_index()).collect();
        let own = all.iter().find(|(d, _)| *d == cuts).unwrap().1;
        prop_assert!((own - min).abs() <= 1e-12);
        // the oracle is a lower bound on every decision, under both evaluators
        for (d, e) in &all {
            prop_assert!(res.effect <= e + 1e-12);
            let dec = PartitionDecision(d.iter().map(|&c| splitcvl::nnprofile::PartitionPoint(c)).collect());
            let lib = sc.evaluate(&dec, &sc.expected_channels()).unwrap();
            prop_assert!((lib - e).abs() <= 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&lib));
        }
    }

    #[test]
    fn device_order_does_not_change_optimum(inst in instance()) {
        let mut rev = inst.clone();
        rev.devs.reverse();
        let a = to_scenario(&inst);
        let b = to_scenario(&rev);
        let ea = a.brute_force_optimal(&a.expected_channels()).unwrap().effect;
        let eb = b.brute_force_optimal(&b.expected_channels()).unwrap().effect;
        prop_assert!((ea - eb).abs() <= 1e-12);
    }
}

#[test]
fn exact_ties_go_to_the_deepest_decision() {
    // identical costs for every cut: every decision ties at effect 0
    let inst = Instance {
        devs: vec![
            Dev {
                peak: 1e12,
                comp_w: 10.0,
                tx_w: 1.0,
                bw: 1e6,
                snr: 3.0,
            };
            2
        ],
        layers: vec![(0, 10); 4],
        kl: vec![(1.0, 1.0); 4],
        w: [0.5, 0.25, 0.25],
        alpha: 0.5,
        lambda: 0.5,
    };
    let sc = to_scenario(&inst);
    let res = sc.brute_force_optimal(&sc.expected_channels()).unwrap();
    let cuts: Vec<usize> = res.decision.0.iter().map(|c| c.candidate_index()).collect();
    assert_eq!(cuts, vec![3, 3]);
    assert_eq!(res.effect, 0.0);
}
