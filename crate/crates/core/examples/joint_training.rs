//! Train the toy-AM logits together with the scales while the LM stays fixed.

use fusion_scales::experiments::{
    joint_comparison, joint_config, prepare, subword_ce_config, Setup,
};
use fusion_scales::pipeline::Parallelism;
use fusion_scales::train::{init_scales, train_scales, DEFAULT_INIT_STDDEV};
use fusion_scales::ScaleMode;

fn main() -> fusion_scales::Result<()> {
    let mut setup = Setup::heterogeneous(1);
    (setup.corpus.train_size, setup.corpus.test_size) = (2000, 100);
    let par = Parallelism::default();
    let prep = prepare(&setup, par)?;
    let init = init_scales(
        ScaleMode::Subword,
        prep.vocab_size(),
        1,
        DEFAULT_INIT_STDDEV,
    )?;
    let ce = train_scales(&prep.ce_set(par)?, &init, &subword_ce_config(1))?;
    let r = joint_comparison(&prep, &ce.scales, &joint_config(1))?;
    println!("CE-trained scales:      {:.5}", r.initial_loss);
    println!("more scale training:    {:.5}", r.scales_only.final_loss);
    println!(
        "joint, scales fixed:    {:.5}",
        r.joint_fixed_scales.final_loss
    );
    println!(
        "joint, scales trained:  {:.5}",
        r.joint_trainable_scales.final_loss
    );
    println!("fixed vs trained gap:   {:.2}%", 100.0 * r.relative_gap);
    Ok(())
}
