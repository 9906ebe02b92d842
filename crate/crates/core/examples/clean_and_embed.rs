//! Cleans a few image URLs and encodes them with the hashed n-gram encoder.

use capmatch::data::{clean_url, clean_url_with, CleanOptions};
use capmatch::embed::{encode_texts, HashedEncoderConfig};

fn main() -> capmatch::Result<()> {
    let urls = [
        "https://upload.wikimedia.org/wikipedia/commons/a/ab/Tower_Bridge_(London).jpg",
        "https://upload.wikimedia.org/wikipedia/commons/3/3f/Pont_Neuf%2C_Paris.JPG",
        "https://upload.wikimedia.org/wikipedia/commons/0/0e/K%C3%B6lner_Dom.jpeg",
    ];
    let raw = CleanOptions { percent_decode: false };
    let mut cleaned = Vec::new();
    for url in urls {
        let c = clean_url(url)?;
        println!("{url}\n  -> {c:?}  (undecoded: {:?})", clean_url_with(url, raw)?);
        cleaned.push(c);
    }

    let config = HashedEncoderConfig::default();
    let m = encode_texts(&cleaned, &config)?;
    println!("\n{} rows x {} dims, unit norm: {}", m.rows(), m.dim(), m.is_normalized());
    for i in 0..m.rows() {
        let sims: Vec<String> = (0..m.rows())
            .map(|j| {
                let dot: f32 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
                format!("{dot:6.3}")
            })
            .collect();
        println!("{}", sims.join(" "));
    }
    Ok(())
}
