use std::collections::BTreeSet;
use std::path::Path;

use driftsel::binning::{bin_equal_count, BinnedSeries, BinningOptions};
use driftsel::fit::{fit_test, rescaled_increments};
use driftsel::ingest::{
    estimate_scaling_constant, parse_counts, select_target_verbs, write_counts, CountRecord, RelFreqRecord,
    ScalingMode, Source, SourceSets, Strictness, Variant, YearRange,
};
use driftsel::tsc::{resample_to_length, Architecture, Network};
use driftsel::rng::substream;
use driftsel::wf::{simulate, WfParams};
use proptest::prelude::*;

fn verb_records() -> impl Strategy<Value = Vec<CountRecord>> {
    prop::collection::vec((1500i32..1560, 0u64..40, 0u64..40), 1..40).prop_map(|rows| {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (year, be, have) in rows {
            if seen.insert(year) {
                out.push(CountRecord::new("v", Variant::Be, year, be, Source::Eebo));
                out.push(CountRecord::new("v", Variant::Have, year, have, Source::Eebo));
            }
        }
        out
    })
}

fn total(records: &[CountRecord]) -> u64 {
    records.iter().map(|r| r.count).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bins_cover_every_token(records in verb_records()) {
        prop_assume!(total(&records) >= 4);
        let s = bin_equal_count(&records, &BinningOptions::default()).unwrap();
        prop_assert_eq!(s.bin_sizes.iter().sum::<u64>(), total(&records));
        prop_assert_eq!(s.total_tokens, total(&records));
        let have: f64 = s.freq_have.iter().zip(&s.bin_sizes).map(|(f, n)| f * *n as f64).sum();
        let expected: u64 = records.iter().filter(|r| r.variant == Variant::Have).map(|r| r.count).sum();
        prop_assert!((have - expected as f64).abs() < 1e-6);
        prop_assert!(s.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.len() <= BinningOptions::default().bin_count(s.total_tokens));
    }

    #[test]
    fn binning_ignores_record_order(records in verb_records(), seed in any::<u64>()) {
        prop_assume!(total(&records) >= 4);
        let mut shuffled = records.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut substream(seed, 0));
        let options = BinningOptions::default();
        prop_assert_eq!(bin_equal_count(&records, &options).unwrap(), bin_equal_count(&shuffled, &options).unwrap());
    }

    #[test]
    fn count_tables_round_trip(records in verb_records()) {
        let text = write_counts(&records);
        let back = parse_counts(&text, Path::new("t.tsv"), Strictness::Strict).unwrap().records;
        prop_assert_eq!(write_counts(&back), text);
        prop_assert_eq!(back.len(), records.len());
    }

    #[test]
    fn raising_min_count_only_removes_verbs(
        totals in prop::collection::vec((1u64..400, 1u64..400, 1u64..400, 0.0f64..1.0), 1..8),
        low in 1u64..200,
        extra in 0u64..200,
        share in 0.0f64..1.0,
    ) {
        let mut eebo = Vec::new();
        let mut gbooks = Vec::new();
        let mut coha = Vec::new();
        let mut names = BTreeSet::new();
        for (i, (e, g, c, be)) in totals.iter().enumerate() {
            let verb = format!("verb{i}");
            let be_e = (*e as f64 * be).round() as u64;
            eebo.push(CountRecord::new(&verb, Variant::Be, 1600, be_e, Source::Eebo));
            eebo.push(CountRecord::new(&verb, Variant::Have, 1600, e - be_e, Source::Eebo));
            gbooks.push(CountRecord::new(&verb, Variant::Have, 1750, *g, Source::GbooksScaled));
            coha.push(CountRecord::new(&verb, Variant::Have, 1900, *c, Source::Coha));
            names.insert(verb);
        }
        let sets = SourceSets { eebo: &eebo, gbooks: &gbooks, coha: &coha };
        let mild: BTreeSet<_> = select_target_verbs(sets, &names, low, share).unwrap().into_iter().collect();
        let strict: BTreeSet<_> = select_target_verbs(sets, &names, low + extra, share).unwrap().into_iter().collect();
        prop_assert!(strict.is_subset(&mild));
    }

    #[test]
    fn scaled_ratio_source_recovers_constant(
        counts in prop::collection::vec(1u64..1000, 20),
        k in 1e-4f64..10.0,
    ) {
        let mut records = Vec::new();
        for (i, c) in counts.iter().enumerate() {
            let verb = if i % 2 == 0 { "a" } else { "b" };
            records.push(CountRecord::new(verb, Variant::Have, 1810 + (i / 2) as i32, *c, Source::Coha));
        }
        let mut totals = std::collections::BTreeMap::new();
        for r in &records {
            *totals.entry(r.year).or_insert(0u64) += r.count;
        }
        let ratio: Vec<RelFreqRecord> = records
            .iter()
            .map(|r| RelFreqRecord::new(&r.verb, r.variant, r.year, k * r.count as f64 / totals[&r.year] as f64))
            .collect();
        for mode in [ScalingMode::PooledPerYear, ScalingMode::PerVerb] {
            let est = estimate_scaling_constant(&records, &ratio, YearRange::new(1810, 2000), mode).unwrap();
            prop_assert!((est.constant * k - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_ignores_time_units(
        freqs in prop::collection::vec(0.01f64..0.99, 4..12),
        scale in 0.1f64..50.0,
        shift in -500.0f64..500.0,
    ) {
        let times: Vec<f64> = (0..freqs.len()).map(|i| i as f64 * 3.0).collect();
        let a = BinnedSeries::from_points("v", times.clone(), freqs.clone(), vec![100; freqs.len()]).unwrap();
        let b = BinnedSeries::from_points(
            "v",
            times.iter().map(|t| t * scale + shift).collect(),
            freqs.clone(),
            vec![100; freqs.len()],
        )
        .unwrap();
        let (ra, rb) = (fit_test(&a, 0.05).unwrap(), fit_test(&b, 0.05).unwrap());
        if ra.t_stat.is_finite() {
            prop_assert!((ra.t_stat - rb.t_stat).abs() < 1e-9 * ra.t_stat.abs().max(1.0));
            prop_assert!((ra.p_value - rb.p_value).abs() < 1e-9);
        }
        let (ya, yb) = (rescaled_increments(&a).unwrap(), rescaled_increments(&b).unwrap());
        for (x, y) in ya.iter().zip(&yb) {
            prop_assert!((x / scale.sqrt() - y).abs() < 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn trajectories_live_on_the_population_grid(
        n in 2u64..300,
        s in -0.5f64..0.5,
        k0 in 0u64..300,
        seed in any::<u64>(),
    ) {
        let x0 = (k0.min(n)) as f64 / n as f64;
        let t = simulate(&WfParams { population_size: n, selection_coeff: s, initial_freq: x0, generations: 60, seed }).unwrap();
        prop_assert_eq!(t.freqs.len(), 61);
        prop_assert_eq!(t.freqs[0], x0);
        for x in &t.freqs {
            let k = x * n as f64;
            prop_assert!((k - k.round()).abs() < 1e-9 && (0.0..=1.0).contains(x));
        }
        if let Some(g) = t.absorbed_at {
            let end = t.freqs[g as usize];
            prop_assert!(t.freqs[g as usize..].iter().all(|&x| x == end));
            prop_assert!(t.freqs[..g as usize].iter().all(|&x| x != 0.0 && x != 1.0));
        } else {
            prop_assert!(t.freqs.iter().all(|&x| x != 0.0 && x != 1.0));
        }
    }

    #[test]
    fn resampling_stays_in_bounds(
        values in prop::collection::vec(0.0f64..=1.0, 2..40),
        len in 4usize..40,
    ) {
        let times: Vec<f64> = (0..values.len()).map(|i| 1500.0 + 7.0 * i as f64).collect();
        let out = resample_to_length(&times, &values, len).unwrap();
        prop_assert_eq!(out.len(), len);
        prop_assert_eq!(out[0], values[0]);
        prop_assert!((out[len - 1] - values[values.len() - 1]).abs() < 1e-12);
        let (lo, hi) = values.iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn class_probabilities_form_a_distribution(
        inputs in prop::collection::vec(0.0f64..=1.0, 25 * 3),
        seed in any::<u64>(),
    ) {
        let net = Network::init(Architecture::standard(25), &mut substream(seed, 0));
        let p = net.predict(&inputs);
        for row in p.chunks(2) {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
        }
    }
}
