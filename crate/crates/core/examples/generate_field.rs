//! Draws a random bump field and writes it as a grid file.
//!
//! ```text
//! cargo run --release --example generate_field -- 7 field_7.grid
//! ```

use hotspot::field::{generate_random_field, load_field_from_grid, FieldConfig};

fn main() -> hotspot::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.next().unwrap_or_else(|| format!("field_{seed}.grid"));

    let config = FieldConfig { seed, ..FieldConfig::default() };
    let field = generate_random_field(&config)?;
    let (x, f) = field.global_optimum(0.1)?;
    println!("seed {seed}: global max {f:.3} at ({:.2}, {:.2})", x.x, x.y);

    field.write_grid(out.as_ref(), 0.1)?;
    let reloaded = load_field_from_grid(out.as_ref())?;
    let (rx, rf) = reloaded.global_optimum(0.1)?;
    println!("{out}: reloaded max {rf:.3} at ({:.2}, {:.2})", rx.x, rx.y);
    Ok(())
}
