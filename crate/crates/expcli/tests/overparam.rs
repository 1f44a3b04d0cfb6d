use expcli::fit::Method;
use expcli::overparam::{interpolation_threshold, run_overparam_sweep, OverparamConfig, OverparamRow};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn it_worst(rows: &[OverparamRow], width: usize) -> f64 {
    median(
        rows.iter()
            .filter(|r| r.width == width && r.method == Method::It)
            .map(OverparamRow::worst_group_error)
            .collect(),
    )
}

#[test]
fn default_sweep_shape_and_it_benefits_from_width() {
    let cfg = OverparamConfig::default();
    let rows = run_overparam_sweep(&cfg).unwrap();
    assert_eq!(cfg.sweep.widths.len(), 8);
    for method in [Method::Erm, Method::Iw, Method::It] {
        assert_eq!(rows.iter().filter(|r| r.method == method).count(), 16);
    }
    let threshold = interpolation_threshold(&cfg).unwrap();
    let largest = *cfg.sweep.widths.iter().max().unwrap();
    for r in rows.iter().filter(|r| r.width >= threshold) {
        assert_eq!(r.train_error, 0.0);
    }
    let (at_largest, at_threshold) = (it_worst(&rows, largest), it_worst(&rows, threshold));
    assert!(at_largest <= at_threshold, "{at_largest} > {at_threshold}");
}

#[test]
fn gd_solver_parses_and_runs_below_threshold() {
    let cfg: OverparamConfig = expcli::config::parse_config(
        "[train]\nsolver = \"gd\"\nsteps = 50\n[sweep]\nwidths = [20]\n[run]\nreplicates = 1\n",
    )
    .unwrap();
    let rows = run_overparam_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.group_errors.len() == 4));
}
