//! Training-memory estimates for the base-equivalent model at batch 32.

use fcft::experiment::memory::{estimate_memory, MemoryAssumptions, BUDGETS_GB};
use fcft::experiment::Precision;
use fcft::model::{FreezePlan, LoraConfig, ModelConfig};

fn main() -> fcft::Result<()> {
    let cfg = ModelConfig::base_equivalent();
    let lora = LoraConfig::default();
    let a = MemoryAssumptions::default();
    println!("batch {} of {} s audio; budgets {:?} GB", a.batch_size, a.seconds, BUDGETS_GB);
    println!("{:<10} {:<7} {:>9} {:>9} {:>9}", "plan", "prec", "params", "acts", "total GB");
    for name in ["full", "partial3", "partial1", "lora", "cache3", "cache1"] {
        let plan = FreezePlan::parse_short(name)?;
        for precision in [Precision::Single, Precision::Mixed] {
            let cached = matches!(plan, FreezePlan::CachingPartial { .. });
            let m = estimate_memory(&cfg, plan, &lora, precision, cached, &a);
            println!(
                "{name:<10} {:<7} {:>9.2} {:>9.2} {:>9.2}{}",
                format!("{precision:?}").to_lowercase(),
                m.parameters as f64 / 1e9,
                m.activations as f64 / 1e9,
                m.total as f64 / 1e9,
                if m.exceeds_gb.is_empty() { String::new() } else { format!("  > {:?} GB", m.exceeds_gb) }
            );
        }
    }
    Ok(())
}
