use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FER_SIDE: usize = 48;
pub const FER_PIXELS: usize = FER_SIDE * FER_SIDE;

/// FER2013 encodes Angry, Disgust, Fear, Happy, Sad, Surprise, Neutral as
/// 0..6; entry `i` is the class index of native label `i`.
pub const FER_NATIVE_TO_INDEX: [usize; 7] = [0, 1, 2, 3, 5, 6, 4];

fn usage_split(usage: &str) -> Option<Split> {
    match usage.trim() {
        "Training" => Some(Split::Train),
        "PublicTest" | "PrivateTest" => Some(Split::Test),
        _ => None,
    }
}

pub fn load_fer_csv(path: &Path, split: Option<Split>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_fer_csv(BufReader::new(file), &path.display().to_string(), split)
}

/// Parses `emotion,pixels,Usage` rows, keeping those in `split` (all when `None`).
pub fn parse_fer_csv<R: Read>(reader: R, source_name: &str, split: Option<Split>) -> Result<Dataset> {
    let err = |line: Option<u64>, message: String| Error::Data {
        source_name: source_name.to_string(),
        line: line.map(|l| l as usize),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| err(Some(1), e.to_string()))?.clone();
    let expected = ["emotion", "pixels", "usage"];
    if headers.len() != 3
        || headers
            .iter()
            .zip(expected)
            .any(|(h, e)| !h.trim().eq_ignore_ascii_case(e))
    {
        return Err(err(
            Some(1),
            format!(
                "expected header emotion,pixels,Usage, found {:?}",
                headers.iter().collect::<Vec<_>>()
            ),
        ));
    }

    let mut samples = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(err(e.position().map(|p| p.line()), e.to_string())),
        }
        let line = record.position().map(|p| p.line());
        if record.len() != 3 {
            return Err(err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let row_split = usage_split(&record[2]).ok_or_else(|| err(line, format!("unknown usage {:?}", &record[2])))?;
        let native: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("label {:?} is not an integer", &record[0])))?;
        let label = *FER_NATIVE_TO_INDEX
            .get(native)
            .ok_or_else(|| err(line, format!("label {native} outside 0-6")))?;
        let mut pixels = Vec::with_capacity(FER_PIXELS);
        for token in record[1].split_ascii_whitespace() {
            let v: u8 = token
                .parse()
                .map_err(|_| err(line, format!("pixel {token:?} is not an integer in 0-255")))?;
            pixels.push(f32::from(v) / 255.0);
        }
        if pixels.len() != FER_PIXELS {
            return Err(err(
                line,
                format!("row has {} pixels, expected {FER_PIXELS}", pixels.len()),
            ));
        }
        if split.is_some_and(|s| s != row_split) {
            continue;
        }
        samples.push(Sample {
            pixels: Tensor::from_vec([1, FER_SIDE, FER_SIDE], pixels)?,
            label,
            source_id: format!("{source_name}:{}", line.unwrap_or(0)),
        });
    }
    Ok(Dataset {
        name: "fer2013".into(),
        split: split.unwrap_or(Split::Train),
        samples,
    })
}

/// Formats one CSV row from a native label and raw 8-bit pixels.
pub fn fer_csv_row(native_label: usize, pixels: &[u8], usage: &str) -> String {
    let joined: Vec<String> = pixels.iter().map(u8::to_string).collect();
    format!("{native_label},{},{usage}", joined.join(" "))
}
