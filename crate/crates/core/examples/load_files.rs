//! Writes a tiny IDX pair and a CSV file, then loads both.
//!
//! cargo run --example load_files

use decent_bva::data::{load_csv, load_idx, CsvOptions, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend(d.to_be_bytes());
    }
    out.extend(body);
    out
}

fn main() -> decent_bva::Result<()> {
    let dir = std::env::temp_dir().join("decent-bva-load-files");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");

    // three 2x2 images with labels 0, 1, 2
    let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
    let (images, labels) = (dir.join("images.idx"), dir.join("labels.idx"));
    std::fs::write(&images, idx(IDX_IMAGES_MAGIC, &[3, 2, 2], &pixels)).unwrap();
    std::fs::write(&labels, idx(IDX_LABELS_MAGIC, &[3], &[0, 1, 2])).unwrap();
    let set = load_idx(&images, &labels)?;
    println!("idx: {} images of shape {:?}, {} classes", set.len(), set.features()[0].shape(), set.classes());
    println!("  first image {:?}", set.features()[0].data());

    let table = dir.join("points.csv");
    std::fs::write(&table, "x,y,label\n0,10,0\n5,20,1\n10,0,1\n").unwrap();
    let opts = CsvOptions {
        feature_cols: Vec::new(),
        label_col: "label".into(),
        class_count: 2,
        normalize: true,
    };
    let set = load_csv(&table, &opts)?;
    for (x, y) in set.features().iter().zip(set.labels()) {
        println!("csv: {:?} -> {y}", x.data());
    }
    Ok(())
}
