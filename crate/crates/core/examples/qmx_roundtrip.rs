//! Write and read the `.qmx` matrix format used by the command-line tool.

use ndarray::array;
use qronos::qmx::{read_qmx, write_qmx, Dtype};

fn main() -> qronos::Result<()> {
    let dir = std::env::temp_dir().join(format!("qmx-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|source| qronos::Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let m = array![[0.1, -2.5, 3.0], [1e-300, f64::MAX, -0.0]];
    let path = dir.join("m.qmx");
    write_qmx(&path, m.view(), Dtype::F64)?;
    let (back, dtype) = read_qmx(&path)?;
    let exact = m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("{dtype:?} {}x{} bit-exact: {exact}", back.nrows(), back.ncols());

    let bytes = std::fs::read(&path).unwrap_or_default();
    let header_end = bytes.iter().position(|&b| b == b'\n').unwrap_or(0);
    println!("header: {}", String::from_utf8_lossy(&bytes[..header_end]));

    write_qmx(&path, m.view(), Dtype::F32)?;
    let (narrow, _) = read_qmx(&path)?;
    println!("f32 copy of 0.1 reads back as {:.17}", narrow[[0, 0]]);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
