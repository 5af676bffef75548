//! Regenerate the bundled synthetic fixture:
//!
//! ```text
//! cargo run -p cindex --example make_fixture -- fixtures 200 5
//! ```
//!
//! Arguments: output directory, document count (default 200), and the eval
//! query stride (one query per N documents, default 5). Output is
//! byte-stable across runs.

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "fixtures".to_string());
    let n_docs: usize = args
        .next()
        .map(|s| s.parse().expect("document count must be an integer"))
        .unwrap_or(200);
    let stride: usize = args
        .next()
        .map(|s| s.parse().expect("query stride must be an integer"))
        .unwrap_or(5);
    cindex::synthetic::write_fixture(std::path::Path::new(&dir), n_docs, stride)
        .expect("fixture generation failed");
    println!("wrote {n_docs}-document fixture to {dir}/");
}
