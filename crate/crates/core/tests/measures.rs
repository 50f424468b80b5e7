use std::sync::Arc;

use gw_invasion::measures::{default_frontier, sandwich_check, split_p, QOptions};
use gw_invasion::pivot_chain::PivotKernel;
use gw_invasion::{Error, NodeId, OffspringDistribution, SurvivalSolver, TreeArena};

fn two_point() -> Arc<OffspringDistribution> {
    Arc::new(OffspringDistribution::two_point(0.4).unwrap())
}

#[test]
fn split_p_settles_as_the_proxy_deepens() {
    // W_D converges, so the proxy split moves less between deep depths than
    // between shallow ones.
    let d = two_point();
    let (mut shallow, mut deep, mut branching) = (0.0, 0.0, 0);
    let mut first = Vec::new();
    for s in 0..60 {
        let mut a = TreeArena::replicate(d.clone(), 77, s);
        if a.deg(NodeId::ROOT) < 2 {
            continue;
        }
        branching += 1;
        let p: Vec<Vec<f64>> =
            [3, 7, 14, 18].iter().map(|&depth| split_p(&mut a, NodeId::ROOT, depth).unwrap()).collect();
        for v in &p {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        shallow += (p[0][0] - p[1][0]).abs();
        deep += (p[2][0] - p[3][0]).abs();
        first.push(p[3][0]);
    }
    assert!(branching > 20);
    assert!(deep < 0.5 * shallow, "deep change {deep} vs shallow {shallow}");
    // Both children are exchangeable.
    let mean = first.iter().sum::<f64>() / first.len() as f64;
    assert!((mean - 0.5).abs() < 0.1, "mean first-child split {mean}");
}

#[test]
fn split_p_is_one_for_an_only_child() {
    let d = two_point();
    let s = (0..200).find(|&s| TreeArena::replicate(d.clone(), 5, s).deg(NodeId::ROOT) == 1).unwrap();
    let mut a = TreeArena::replicate(d, 5, s);
    assert_eq!(split_p(&mut a, NodeId::ROOT, 6).unwrap(), vec![1.0]);
}

#[test]
fn sandwich_holds_over_random_trees() {
    let d = two_point();
    let k = PivotKernel::new(SurvivalSolver::new(d.clone()).unwrap()).unwrap();
    let frontier = default_frontier(&d);
    let (mut rows, mut skipped) = (0, 0);
    let mut worst = f64::INFINITY;
    for t in 0..100 {
        let mut a = TreeArena::replicate(d.clone(), 65, t);
        let opts = QOptions { frontier, ..QOptions::new(2000, 650 + t) };
        // Trees whose quenched survival at 0.65 is below the acceptance floor.
        let r = match sandwich_check(&mut a, NodeId::ROOT, 0.65, &k, &opts) {
            Err(Error::Inconclusive { .. }) => {
                skipped += 1;
                continue;
            }
            r => r.unwrap(),
        };
        assert_eq!(r.violations(), 0, "tree {t}: {r:?}");
        for row in &r.rows {
            assert!(row.lhs >= 0.0 && row.rhs >= 0.0);
            worst = worst.min(row.slack + 3.0 * row.se);
        }
        rows += r.rows.len();
    }
    assert!(skipped < 25, "{skipped} trees inconclusive");
    assert!(rows >= 100);
    assert!(worst > -1e-9);
}
