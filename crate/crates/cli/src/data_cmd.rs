//! `gen-data`: synthesize the balanced scene splits and write them as JSONL.

use std::fs;

use egocast_core::dataset::{generate_splits, write_scenes};
use egocast_core::error::Result;

use crate::context::{write_effective_config, Manifest};
use crate::CommonArgs;

pub fn run(args: &CommonArgs) -> Result<()> {
    let cfg = args.effective(&[])?;
    let out = args.out();
    fs::create_dir_all(out.join("data"))?;
    let mut manifest = Manifest::load(&out)?;
    let hash = write_effective_config(&out, &cfg, &mut manifest)?;

    let splits = generate_splits(cfg.data.master_seed, &cfg.data.split_spec())?;
    for (name, scenes) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)]
    {
        let path = out.join("data").join(format!("{name}.jsonl"));
        write_scenes(&path, scenes)?;
        manifest.record(&out, &path)?;
        println!("{name}: {} scenes -> {}", scenes.len(), path.display());
    }
    manifest.write()?;
    println!("effective config {hash}");
    Ok(())
}
