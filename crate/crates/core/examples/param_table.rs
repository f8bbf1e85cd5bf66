//! Trainable parameter counts per freeze plan, closed form against enumeration.
//!
//! ```text
//! cargo run --release --example param_table -- [base-equivalent|desk|desk-deep]
//! ```

use fcft::model::{counts, FreezePlan, LoraConfig, Model, ModelConfig};

fn main() -> fcft::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "base-equivalent".into());
    let cfg = ModelConfig::preset(&preset)?;
    let lora = LoraConfig::default();
    let mut model = Model::<f32>::build(cfg.clone(), 0)?;
    println!("{preset}: {} layers, width {}, ffn {}", cfg.n_layers, cfg.d_model, cfg.d_ffn);
    println!("{:<10} {:>12} {:>12} {:>7}", "plan", "closed", "enumerated", "shown");
    for name in ["full", "partial3", "partial2", "partial1", "cache3", "cache2", "cache1", "lora"] {
        let plan = FreezePlan::parse_short(name)?;
        if plan == FreezePlan::Lora {
            model.attach_lora(lora.clone(), 0)?;
        } else {
            model.apply_freeze_plan(plan)?;
        }
        let closed = counts::trainable(&cfg, plan, &lora);
        println!(
            "{name:<10} {closed:>12} {:>12} {:>7}",
            model.count_trainable_params(),
            counts::display(closed)
        );
    }
    Ok(())
}
