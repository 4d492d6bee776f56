//! CSV and CCAT interchange: a lossless round trip and the error cases.
//!
//! cargo run --example convert

use ccafuse::io::{convert, read_ccat, read_csv, write_ccat, write_csv, Tensor};
use ccafuse::{Matrix, MatrixStack};

fn main() -> ccafuse::Result<()> {
    let dir = std::env::temp_dir().join("ccafuse-convert-example");
    std::fs::create_dir_all(&dir)?;
    let m = Matrix::from_row_slice(2, 3, &[0.1, -2.5, 1e-300, 3.0, f64::MAX, 1.0 / 3.0]);
    let (csv, ccat, back) = (dir.join("m.csv"), dir.join("m.ccat"), dir.join("back.csv"));
    write_csv(&csv, &m)?;
    convert(&csv, &ccat)?;
    convert(&ccat, &back)?;
    let t = read_ccat(&ccat)?;
    println!(
        "CCAT dims {:?}, {} bytes",
        t.dims,
        std::fs::metadata(&ccat)?.len()
    );
    println!("round trip bit-identical: {}", read_csv(&back)? == m);

    std::fs::write(dir.join("ragged.csv"), "a,b\n1,2\n3\n")?;
    if let Err(e) = convert(&dir.join("ragged.csv"), &ccat) {
        println!("ragged input: {e}");
    }
    let stack = MatrixStack::new(vec![Matrix::identity(2, 2); 4])?;
    write_ccat(&dir.join("stack.ccat"), &Tensor::from_stack(&stack))?;
    if let Err(e) = convert(&dir.join("stack.ccat"), &dir.join("stack.csv")) {
        println!("3-D to CSV: {e}");
    }
    Ok(())
}
