//! Acceptance criteria, one PASS/FAIL line each.

use localkernel::experiments::{self, Report, Settings};

fn line(n: usize, reports: &[Report]) -> bool {
    let ok = reports.iter().all(Report::passed);
    println!("criterion {n}: {}", if ok { "PASS" } else { "FAIL" });
    for r in reports {
        for m in &r.metrics {
            let op = match m.bound {
                experiments::Bound::AtMost => "<=",
                experiments::Bound::AtLeast => ">=",
            };
            let tag = if m.passed { "ok" } else { "FAILED" };
            println!("    {}.{} = {:.6e} {op} {:.6e} [{tag}]", r.id, m.name, m.value, m.threshold);
        }
    }
    ok
}

fn run(id: &str) -> Report {
    let start = std::time::Instant::now();
    let rep = experiments::run(id, &Settings::default()).unwrap_or_else(|e| panic!("{id}: {e}"));
    eprintln!("{id} finished in {:.1}s", start.elapsed().as_secs_f64());
    rep
}

#[test]
fn acceptance() {
    let groups: [&[&str]; 8] = [&["fig1"], &["circle"], &["fig2"], &["fig3"], &["fig4"], &["fig5"], &["moments"], &["structure"]];
    let mut failed = Vec::new();
    for (i, ids) in groups.iter().enumerate() {
        let reports: Vec<Report> = ids.iter().map(|id| run(id)).collect();
        if !line(i + 1, &reports) {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
