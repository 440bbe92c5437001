//! Saves a model as a JSON manifest plus weight blob, loads it back and
//! checks the outputs agree bit for bit.

use convad::synthetic::{golden_cnn, golden_input, GOLDEN_SEED};
use convad::{load_model, model::Manifest};

fn main() -> convad::Result<()> {
    let dir = std::env::temp_dir().join("convad-model-io");
    std::fs::create_dir_all(&dir).map_err(|e| convad::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let (manifest, blob) = (dir.join("golden.json"), dir.join("golden.adw"));

    let model = golden_cnn(GOLDEN_SEED);
    model.save(&manifest, &blob)?;
    println!("{}", Manifest::from_model(&model).to_json());

    let loaded = load_model(&manifest, &blob)?;
    let x = golden_input();
    assert_eq!(model.forward(&x)?, loaded.forward(&x)?);
    println!("checkpoints: {:?}", loaded.graph().checkpoints());
    println!("{} weight blobs round-tripped", loaded.weights().len());
    Ok(())
}
