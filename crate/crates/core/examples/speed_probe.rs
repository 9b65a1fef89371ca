use tokendown::bench::*;
use tokendown::grid::MergeRatio;

fn main() {
    for (h, ratio, method) in [
        (64usize, 0.75, Method::Dense),
        (64, 0.75, Method::Todo),
        (64, 0.75, Method::Tome),
        (128, 0.75, Method::Dense),
        (128, 0.75, Method::Todo),
        (128, 0.75, Method::Tome),
    ] {
        let params = BenchParams::new(h, h, 320, 8, MergeRatio::new(ratio).unwrap(), 1)
            .unwrap()
            .with_timing(1, 0);
        let rec = run_bench_with_baseline(method, &params, None).unwrap();
        println!(
            "{} {}x{} ratio {}: {:.3} s/iter",
            method, h, h, ratio,
            rec.wall_nanos as f64 / 1e9
        );
    }
}
