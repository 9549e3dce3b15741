use std::path::Path;

use super::{DatasetConfig, ExperimentConfig, HarnessError};
use crate::preprocess::{synth_dataset, RawImage};
use crate::station::{DiagnosticClass, Sex};

/// One labelled image with optional patient metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub id: String,
    pub image: RawImage,
    pub label: DiagnosticClass,
    pub age: Option<u32>,
    pub sex: Option<Sex>,
    pub anatomical_site: Option<String>,
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Vec<DatasetSample>, HarnessError> {
    match &config.dataset {
        DatasetConfig::Synthetic(s) => {
            let samples = synth_dataset(s.n, &s.proportions, s.image_size, config.data_seed())
                .map_err(|e| HarnessError::Config(format!("dataset.synthetic: {e}")))?;
            samples
                .into_iter()
                .map(|s| {
                    Ok(DatasetSample {
                        label: DiagnosticClass::from_index(s.label)
                            .ok_or_else(|| HarnessError::Config(format!("class index {} out of range", s.label)))?,
                        id: s.id,
                        image: s.image,
                        age: s.age,
                        sex: s.sex.and_then(|x| x.parse().ok()),
                        anatomical_site: s.anatomical_site.map(str::to_owned),
                    })
                })
                .collect()
        }
        DatasetConfig::Directory(d) => {
            let labels = read_labels_csv(&d.labels)?;
            labels
                .into_iter()
                .map(|(file, label)| {
                    let path = d.images.join(&file);
                    let bytes = std::fs::read(&path)
                        .map_err(|e| HarnessError::Config(format!("image {} listed in labels: {e}", path.display())))?;
                    let image = RawImage::from_png(&bytes)
                        .map_err(|e| HarnessError::Runtime(format!("cannot decode {}: {e}", path.display())))?;
                    let label = DiagnosticClass::from_index(label).expect("read_labels_csv checks the range");
                    Ok(DatasetSample { id: file, image, label, age: None, sex: None, anatomical_site: None })
                })
                .collect()
        }
    }
}

/// Read a `filename,label` CSV. Labels are class codes (`MEL`, `NV`, ...)
/// or class indices.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, usize)>, HarnessError> {
    let config = |m: String| HarnessError::Config(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| config(e.to_string()))?;
    let headers = reader.headers().map_err(|e| config(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "filename" || &headers[1] != "label" {
        return Err(config(format!("expected header `filename,label`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| config(e.to_string()))?;
        let line = i + 2;
        let label = parse_label(&row[1]).ok_or_else(|| config(format!("line {line}: unknown label {:?}", &row[1])))?;
        out.push((row[0].to_owned(), label));
    }
    Ok(out)
}

fn parse_label(text: &str) -> Option<usize> {
    if let Ok(i) = text.parse::<usize>() {
        return DiagnosticClass::from_index(i).map(DiagnosticClass::index);
    }
    text.parse::<DiagnosticClass>().ok().map(DiagnosticClass::index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_by_code_or_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, "filename,label\na.png,MEL\nb.png, 1\nc.png,scc\n").unwrap();
        assert_eq!(read_labels_csv(&path).unwrap(), vec![("a.png".into(), 0), ("b.png".into(), 1), ("c.png".into(), 7)]);
    }

    #[test]
    fn bad_label_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        for body in ["file,label\na.png,MEL\n", "filename,label\na.png,XYZ\n", "filename,label\na.png,8\n"] {
            std::fs::write(&path, body).unwrap();
            assert_eq!(read_labels_csv(&path).unwrap_err().exit_code(), 2, "{body}");
        }
        assert_eq!(read_labels_csv(&dir.path().join("missing.csv")).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn directory_dataset_loads_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let img = RawImage::filled(3, 2, [10, 20, 30]).unwrap();
        std::fs::write(dir.path().join("x.png"), img.to_png()).unwrap();
        std::fs::write(dir.path().join("labels.csv"), "filename,label\nx.png,BCC\n").unwrap();
        let toml = format!(
            "[dataset.directory]\nimages = {:?}\nlabels = {:?}\n",
            dir.path().display().to_string(),
            dir.path().join("labels.csv").display().to_string()
        );
        let config = ExperimentConfig::from_toml(&toml).unwrap();
        let data = load_dataset(&config).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].image, img);
        assert_eq!(data[0].label, DiagnosticClass::BCC);
    }
}
