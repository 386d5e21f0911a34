//! Binary PPM (P6, 8-bit RGB) reading and writing. No codecs, lossless.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn write(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != w * h * 3 {
        return Err(Error::Data(format!(
            "ppm payload {} bytes does not match {w}x{h}x3",
            rgb.len()
        )));
    }
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    f.write_all(rgb)?;
    f.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // magic, width, height, maxval: four whitespace-separated tokens, with
    // '#' comments allowed between them
    let mut tokens: Vec<String> = Vec::new();
    let mut in_comment = false;
    let mut cur = String::new();
    let mut byte = [0u8; 1];
    while tokens.len() < 4 {
        r.read_exact(&mut byte)?;
        header.push(byte[0]);
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(c);
        }
    }
    if tokens[0] != "P6" {
        return Err(Error::Data(format!("not a P6 ppm: magic '{}'", tokens[0])));
    }
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Data(format!("bad ppm width '{}'", tokens[1])))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Data(format!("bad ppm height '{}'", tokens[2])))?;
    if tokens[3] != "255" {
        return Err(Error::Data(format!("unsupported ppm maxval '{}'", tokens[3])));
    }
    let mut rgb = vec![0u8; w * h * 3];
    r.read_exact(&mut rgb)?;
    Ok((w, h, rgb))
}
