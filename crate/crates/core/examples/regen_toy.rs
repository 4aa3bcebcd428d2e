//! Rewrites the bundled toy corpus under `data/toy`.

use std::path::Path;

use phononer::corpus::write_conll;
use phononer::toy;

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy");
    let d = toy::generate(toy::SEED);
    std::fs::write(dir.join("train.conll"), write_conll(&d.train, None))?;
    std::fs::write(dir.join("dev.conll"), write_conll(&d.dev, None))?;
    std::fs::write(dir.join("embeddings.txt"), d.vocab.embeddings_text())?;
    Ok(())
}
