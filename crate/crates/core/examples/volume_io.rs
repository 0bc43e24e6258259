//! Read a NIfTI-1 image (or a built-in big-endian, scaled int16 sample),
//! convert it to the native `.vol` format and read it back.
//!
//! cargo run --example volume_io -- [image.nii]

use brainage::nifti::{parse_nifti1, read_nifti1, Nifti1Header};
use brainage::volume::{read_vol, write_vol};

fn sample_nifti() -> Vec<u8> {
    let mut b = vec![0u8; 352];
    b[0..4].copy_from_slice(&348i32.to_be_bytes());
    for (k, d) in [3i16, 4, 4, 2, 1, 1, 1, 1].iter().enumerate() {
        b[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_be_bytes());
    }
    b[70..72].copy_from_slice(&4i16.to_be_bytes());
    b[72..74].copy_from_slice(&16i16.to_be_bytes());
    for (k, p) in [1.0f32, 1.0, 1.0, 2.5, 1.0, 1.0, 1.0, 1.0].iter().enumerate() {
        b[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_be_bytes());
    }
    b[108..112].copy_from_slice(&352.0f32.to_be_bytes());
    b[112..116].copy_from_slice(&0.25f32.to_be_bytes());
    b[116..120].copy_from_slice(&(-1.0f32).to_be_bytes());
    b[344..348].copy_from_slice(b"n+1\0");
    for i in 0..32i16 {
        b.extend_from_slice(&(i * 4).to_be_bytes());
    }
    b
}

fn main() -> brainage::Result<()> {
    let v = match std::env::args().nth(1) {
        Some(path) => read_nifti1(&path)?,
        None => {
            let bytes = sample_nifti();
            let h = Nifti1Header::parse(&bytes)?;
            println!("header: {:?} endian, datatype {:?}, slope {} inter {}", h.endian, h.datatype, h.scl_slope, h.scl_inter);
            parse_nifti1(&bytes)?
        }
    };
    let n = v.len() as f64;
    let mean = v.voxels().iter().map(|&x| x as f64).sum::<f64>() / n;
    println!("dims {:?}  spacing {:?} mm  mean {mean:.4}", v.dims(), v.spacing());

    let out = std::env::temp_dir().join("brainage-example.vol");
    write_vol(&out, &v)?;
    let back = read_vol(&out)?;
    println!("wrote {} ({} bytes); identical after reading back: {}", out.display(), v.to_vol_bytes().len(), back == v);
    Ok(())
}
