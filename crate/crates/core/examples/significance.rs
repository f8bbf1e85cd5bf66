//! One-way ANOVA and Bonferroni-corrected t-tests over per-seed test scores.

use fcft::experiment::stats::{anova_oneway, ttest_pairwise_bonferroni, TTestKind, ALPHA};

fn main() -> fcft::Result<()> {
    let groups = vec![
        ("full_sp".to_string(), vec![0.637, 0.641, 0.652, 0.629, 0.626]),
        ("partial3_sp".to_string(), vec![0.648, 0.655, 0.640, 0.651, 0.649]),
        ("lora_sp".to_string(), vec![0.622, 0.610, 0.631, 0.625, 0.618]),
    ];
    let values: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
    let a = anova_oneway(&values)?;
    println!("ANOVA F({}, {}) = {:.3}, p = {:.2e}", a.df_between, a.df_within, a.f, a.p);

    for kind in [TTestKind::Welch, TTestKind::Paired] {
        println!("{kind:?} tests against full_sp, alpha {ALPHA}, 2 comparisons:");
        for t in ttest_pairwise_bonferroni(&groups, &[(1, 0), (2, 0)], None, kind)? {
            println!(
                "  {} vs {}: t = {:+.3} (df {:.2}) p = {:.4} adjusted {:.4}{}",
                t.a,
                t.b,
                t.t,
                t.df,
                t.p_raw,
                t.p_adjusted,
                if t.significant { "  *" } else { "" }
            );
        }
    }
    Ok(())
}
