//! Regenerates the committed documentation tree from the variant registry.
//!
//! Run from anywhere in the workspace:
//! `cargo run -p egocast-core --example render_docs`

fn main() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for (rel, content) in egocast_core::docsgen::render_docs().expect("registry and cards agree") {
        let path = root.join(rel);
        std::fs::create_dir_all(path.parent().expect("docs files live in a directory"))
            .expect("create docs directory");
        std::fs::write(&path, content).expect("write doc file");
        println!("wrote {}", path.display());
    }
}
