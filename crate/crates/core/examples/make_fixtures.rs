//! Regenerate the synthetic corpus under `tests/fixtures/`.
//!
//! Each verb follows one Wright-Fisher path laid over 1473-2009 at four
//! years per generation; yearly token counts are binomial draws from it.
//! The ratio source is the count shares of a hidden count table times
//! `GBOOKS_SCALE`, and every per-year total in the overlap and ratio spans
//! is the same constant, so scaling recovers the hidden counts exactly.
//!
//! | verb    | model                 | role                                 |
//! |---------|-----------------------|--------------------------------------|
//! | surge   | N=1000, s=0.1         | selection, passes both thresholds    |
//! | wander  | N=20000, s=0          | drift, passes both thresholds        |
//! | linger  | N=2000, s=0, 1 tok/yr | passes the mild threshold only       |
//! | prosper | N=2000, s=0, x0=0.8   | HAVE-dominant early, fails BE share  |
//! | mend    | N=2000, s=0           | not on the intransitive list         |
//!
//! Run with `cargo run -p driftsel --example make_fixtures`.

use std::fs;
use std::path::Path;

use driftsel::ingest::{write_counts, write_rel_freqs, CountRecord, RelFreqRecord, Source, Variant};
use driftsel::rng::substream;
use driftsel::wf::{simulate_replicate, Trajectory, WfParams};
use rand_distr::{Binomial, Distribution};

const FIRST_YEAR: i32 = 1473;
const LAST_YEAR: i32 = 2009;
const YEARS_PER_GENERATION: i32 = 4;
const EEBO_END: i32 = 1700;
const GBOOKS_START: i32 = 1701;
const COHA_START: i32 = 1810;
const GBOOKS_SCALE: f64 = 1e-3;
const SEED: u64 = 1_000;

struct Verb {
    name: &'static str,
    n: u64,
    s: f64,
    x0: f64,
    tokens_per_year: u64,
    /// Predicate a candidate path must satisfy; the first replicate that
    /// does is used.
    accept: fn(&Trajectory) -> bool,
}

fn freq_at(t: &Trajectory, year: i32) -> f64 {
    t.freqs[((year - FIRST_YEAR) / YEARS_PER_GENERATION) as usize]
}

fn verbs() -> Vec<Verb> {
    let any: fn(&Trajectory) -> bool = |_| true;
    vec![
        Verb {
            name: "surge",
            n: 1000,
            s: 0.1,
            x0: 0.02,
            tokens_per_year: 20,
            accept: |t| t.final_freq() == 1.0 && freq_at(t, 1600) < 0.3,
        },
        Verb { name: "wander", n: 20_000, s: 0.0, x0: 0.3, tokens_per_year: 20, accept: any },
        Verb { name: "linger", n: 2000, s: 0.0, x0: 0.3, tokens_per_year: 1, accept: any },
        Verb { name: "prosper", n: 2000, s: 0.0, x0: 0.8, tokens_per_year: 20, accept: |t| freq_at(t, 1700) > 0.6 },
        Verb { name: "mend", n: 2000, s: 0.0, x0: 0.2, tokens_per_year: 20, accept: any },
    ]
}

fn path_for(v: &Verb, seed: u64) -> Trajectory {
    let generations = ((LAST_YEAR - FIRST_YEAR) / YEARS_PER_GENERATION) as u64 + 1;
    let params = WfParams { population_size: v.n, selection_coeff: v.s, initial_freq: v.x0, generations, seed };
    (0..)
        .map(|i| simulate_replicate(&params, i).expect("valid parameters"))
        .find(|t| (v.accept)(t))
        .expect("some replicate qualifies")
}

fn main() {
    let out = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    fs::create_dir_all(&out).unwrap();
    let verbs = verbs();
    let mut eebo = Vec::new();
    let mut coha = Vec::new();
    let mut hidden = Vec::new();
    for (i, v) in verbs.iter().enumerate() {
        let path = path_for(v, SEED + i as u64);
        let mut rng = substream(SEED, 100 + i as u64);
        for year in FIRST_YEAR..=LAST_YEAR {
            let n = v.tokens_per_year;
            let have = Binomial::new(n, freq_at(&path, year)).unwrap().sample(&mut rng);
            let (source, sink) = if year <= EEBO_END {
                (Source::Eebo, &mut eebo)
            } else if year < COHA_START {
                (Source::GbooksScaled, &mut hidden)
            } else {
                (Source::Coha, &mut coha)
            };
            sink.push(CountRecord::new(v.name, Variant::Be, year, n - have, source));
            sink.push(CountRecord::new(v.name, Variant::Have, year, have, source));
        }
    }

    // every year in the ratio span has the same total of tracked tokens
    let year_total: u64 = verbs.iter().map(|v| v.tokens_per_year).sum();
    let gbooks: Vec<RelFreqRecord> = hidden
        .iter()
        .chain(coha.iter())
        .filter(|r| r.year >= GBOOKS_START)
        .map(|r| RelFreqRecord::new(&r.verb, r.variant, r.year, GBOOKS_SCALE * r.count as f64 / year_total as f64))
        .collect();

    fs::write(out.join("eebo.tsv"), write_counts(&eebo)).unwrap();
    fs::write(out.join("coha.tsv"), write_counts(&coha)).unwrap();
    fs::write(out.join("gbooks.tsv"), write_rel_freqs(&gbooks)).unwrap();
    fs::write(out.join("gbooks_hidden_counts.tsv"), write_counts(&hidden)).unwrap();
    fs::write(
        out.join("intransitive.txt"),
        "# synthetic intransitive list\nabide\nlinger\nprosper\nsurge\nwander\n",
    )
    .unwrap();
    fs::write(
        out.join("pipeline.toml"),
        "# synthetic corpus run\n\
         eebo = \"eebo.tsv\"\n\
         coha = \"coha.tsv\"\n\
         gbooks = \"gbooks.tsv\"\n\
         intransitive = \"intransitive.txt\"\n\
         output_dir = \"out\"\n\
         overlap = \"1810-2000\"\n\
         min_count = 200\n\
         min_be_share = 0.5\n\
         alpha = 0.05\n",
    )
    .unwrap();
    println!("wrote fixtures to {}", out.display());
}
