use std::path::PathBuf;

fn main() {
    println!("fs placeholder");
    let _ = PathBuf::new();
}
