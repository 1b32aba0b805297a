//! Text file formats: embedding CSV, position files, PGM component dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::embedding::{embed_2d, Embedding, FrequencySpec, Layout, Modality};
use crate::error::{CapeError, Result};
use crate::matrix::Matrix;
use crate::positions::{image_positions, PositionGrid2D, PositionSet1D};

pub const EMBEDDING_FORMAT: &str = "cape-emb v1";
pub const POSITION_FORMAT: &str = "cape-pos v1";

/// Values are written with 17 significant digits, which round-trips f64 exactly.
fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_value(s: &str, line: usize) -> Result<f64> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|e| CapeError::Parse { line, msg: format!("{s:?}: {e}") })
}

fn join_values(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_value(v)).collect::<Vec<_>>().join(",")
}

/// `# key: value` header lines followed by CSV body lines.
struct Parsed<'a> {
    headers: Vec<(&'a str, &'a str, usize)>,
    body: Vec<(&'a str, usize)>,
}

fn split(text: &str) -> Result<Parsed<'_>> {
    let mut headers = Vec::new();
    let mut body = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if let Some(rest) = line.strip_prefix('#') {
            if !body.is_empty() {
                return Err(CapeError::Parse { line: lineno, msg: "header after body".into() });
            }
            let (k, v) = rest
                .split_once(':')
                .ok_or_else(|| CapeError::Parse { line: lineno, msg: "header must be `# key: value`".into() })?;
            headers.push((k.trim(), v.trim(), lineno));
        } else if !line.trim().is_empty() {
            body.push((line, lineno));
        }
    }
    Ok(Parsed { headers, body })
}

impl Parsed<'_> {
    fn get(&self, key: &str) -> Result<&str> {
        self.headers
            .iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, v, _)| *v)
            .ok_or_else(|| CapeError::Parse { line: 0, msg: format!("missing header {key:?}") })
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.parse().map_err(|_| CapeError::Parse { line: 0, msg: format!("header {key:?} is not an integer: {v:?}") })
    }

    fn expect_format(&self, want: &str) -> Result<()> {
        let got = self.get("format")?;
        if got != want {
            return Err(CapeError::Parse { line: 1, msg: format!("expected format {want:?}, got {got:?}") });
        }
        Ok(())
    }

    fn rows(&self, width: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.body.len() * width);
        for &(line, lineno) in &self.body {
            let before = out.len();
            for field in line.split(',') {
                out.push(parse_value(field, lineno)?);
            }
            if out.len() - before != width {
                return Err(CapeError::Parse {
                    line: lineno,
                    msg: format!("expected {width} columns, got {}", out.len() - before),
                });
            }
        }
        Ok(out)
    }
}

/// Embedding matrix plus its modality, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub modality: Modality,
    pub embedding: Embedding,
}

impl EmbeddingFile {
    pub fn to_text(&self) -> String {
        let e = &self.embedding;
        let mut out = String::new();
        let _ = writeln!(out, "# format: {EMBEDDING_FORMAT}");
        let _ = writeln!(out, "# modality: {}", self.modality);
        let _ = writeln!(out, "# dim_K: {}", e.dim());
        let _ = writeln!(out, "# n_tokens: {}", e.n_tokens());
        let _ = writeln!(out, "# layout: {}", e.layout());
        for i in 0..e.n_tokens() {
            let _ = writeln!(out, "{}", join_values(e.row(i)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let p = split(text)?;
        p.expect_format(EMBEDDING_FORMAT)?;
        let modality: Modality = p.get("modality")?.parse()?;
        let layout: Layout = p.get("layout")?.parse()?;
        let dim = p.get_usize("dim_K")?;
        let n = p.get_usize("n_tokens")?;
        if p.body.len() != n {
            return Err(CapeError::Parse { line: 0, msg: format!("header says {n} tokens, body has {}", p.body.len()) });
        }
        let matrix = Matrix::from_vec(n, dim, p.rows(dim)?)?;
        Ok(Self { modality, embedding: Embedding::new(matrix, layout)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Either a batch of 1D sequences (one line per sequence) or a 2D grid (one
/// `x,y` line per token in grid order).
#[derive(Debug, Clone, PartialEq)]
pub enum PositionFile {
    OneD(PositionSet1D),
    TwoD(PositionGrid2D),
}

impl PositionFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# format: {POSITION_FORMAT}");
        match self {
            PositionFile::OneD(p) => {
                let _ = writeln!(out, "# kind: 1d");
                let _ = writeln!(out, "# batch: {}", p.batch());
                let _ = writeln!(out, "# length: {}", p.len());
                for row in p.rows() {
                    let _ = writeln!(out, "{}", join_values(row));
                }
            }
            PositionFile::TwoD(g) => {
                let _ = writeln!(out, "# kind: 2d");
                let _ = writeln!(out, "# batch: {}", g.batch());
                let _ = writeln!(out, "# nx: {}", g.nx());
                let _ = writeln!(out, "# ny: {}", g.ny());
                for (x, y) in g.x().iter().zip(g.y()) {
                    let _ = writeln!(out, "{},{}", fmt_value(*x), fmt_value(*y));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let p = split(text)?;
        p.expect_format(POSITION_FORMAT)?;
        match p.get("kind")? {
            "1d" => {
                let batch = p.get_usize("batch")?;
                let len = p.get_usize("length")?;
                if p.body.len() != batch {
                    return Err(CapeError::Parse { line: 0, msg: format!("header says {batch} rows, body has {}", p.body.len()) });
                }
                Ok(PositionFile::OneD(PositionSet1D::new(batch, len, p.rows(len)?)?))
            }
            "2d" => {
                let (batch, nx, ny) = (p.get_usize("batch")?, p.get_usize("nx")?, p.get_usize("ny")?);
                let flat = p.rows(2)?;
                let x = flat.iter().step_by(2).copied().collect();
                let y = flat.iter().skip(1).step_by(2).copied().collect();
                Ok(PositionFile::TwoD(PositionGrid2D::new(batch, nx, ny, x, y)?))
            }
            other => Err(CapeError::Parse { line: 0, msg: format!("unknown position kind {other:?}") }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Gray level for a component value in `[-1, 1]`.
pub fn gray_level(v: f64) -> u8 {
    (255.0 * (v + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

/// ASCII PGM (`P2`) of one embedding column over an `nx × ny` grid: `x` runs
/// left to right, `y` top to bottom.
pub fn component_pgm(emb: &Embedding, nx: usize, ny: usize, component: usize) -> Result<String> {
    if emb.n_tokens() != nx * ny {
        return Err(CapeError::ShapeMismatch(format!("{} tokens for a {nx}x{ny} grid", emb.n_tokens())));
    }
    if component >= emb.dim() {
        return Err(CapeError::InvalidInput(format!("component {component} out of range for dim {}", emb.dim())));
    }
    let mut out = format!("P2\n{nx} {ny}\n255\n");
    for iy in 0..ny {
        let line: Vec<String> =
            (0..nx).map(|ix| gray_level(emb.row(ix * ny + iy)[component]).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Which components of a `P×P` image embedding to dump, and where.
#[derive(Debug, Clone, PartialEq)]
pub struct VizRequest {
    pub grid_side: usize,
    pub dim: usize,
    pub stride: usize,
    pub out_dir: PathBuf,
}

impl VizRequest {
    pub fn selected_components(&self) -> Vec<usize> {
        (0..self.dim).step_by(self.stride.max(1)).collect()
    }

    /// Writes `component_NNNN.pgm` per selected component and returns the paths.
    pub fn run(&self) -> Result<Vec<PathBuf>> {
        if self.stride == 0 {
            return Err(CapeError::InvalidInput("stride must be >= 1".into()));
        }
        let spec = FrequencySpec::image(self.dim)?;
        let grid = image_positions(self.grid_side, self.grid_side)?;
        let emb = embed_2d(&grid, &spec)?;
        std::fs::create_dir_all(&self.out_dir)?;
        let mut paths = Vec::new();
        for c in self.selected_components() {
            let path = self.out_dir.join(format!("component_{c:04}.pgm"));
            std::fs::write(&path, component_pgm(&emb, grid.nx(), grid.ny(), c)?)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::embed_1d;

    #[test]
    fn embedding_text_layout() {
        let spec = FrequencySpec::text(8).unwrap();
        let e = embed_1d(&[0.0, 1.0, f64::NAN, 3.0], &spec).unwrap();
        let f = EmbeddingFile { modality: Modality::Text, embedding: e };
        let text = f.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# format: cape-emb v1");
        assert_eq!(lines[2], "# dim_K: 8");
        assert_eq!(lines.len(), 5 + 4);
        assert!(lines[5].starts_with("1.0000000000000000e0,"));
        assert!(lines[7].split(',').all(|v| v == "nan"));
        let back = EmbeddingFile::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.embedding.row(3), f.embedding.row(3));
    }

    #[test]
    fn malformed_embedding_rejected() {
        assert!(EmbeddingFile::from_text("# format: other\n").is_err());
        let bad = "# format: cape-emb v1\n# modality: text\n# dim_K: 2\n# n_tokens: 1\n# layout: concatenated\n1,2,3\n";
        assert!(matches!(EmbeddingFile::from_text(bad), Err(CapeError::Parse { line: 6, .. })));
        let short = "# format: cape-emb v1\n# modality: text\n# dim_K: 2\n# n_tokens: 2\n# layout: concatenated\n1,2\n";
        assert!(EmbeddingFile::from_text(short).is_err());
    }

    #[test]
    fn position_files_round_trip() {
        let p = PositionSet1D::from_rows(&[vec![0.1, 2.0, f64::NAN], vec![-1.0, 0.0, 1.0 / 3.0]]).unwrap();
        let f = PositionFile::OneD(p);
        let text = f.to_text();
        assert_eq!(PositionFile::from_text(&text).unwrap().to_text(), text);
        let g = PositionFile::TwoD(image_positions(2, 3).unwrap());
        let text = g.to_text();
        assert_eq!(PositionFile::from_text(&text).unwrap(), g);
    }

    #[test]
    fn gray_mapping() {
        assert_eq!(gray_level(1.0), 255);
        assert_eq!(gray_level(-1.0), 0);
        assert_eq!(gray_level(0.0), 128);
        assert_eq!(gray_level(1.5), 255);
    }

    #[test]
    fn single_pixel_constant_component() {
        let spec = FrequencySpec::image(4).unwrap();
        let g = PositionGrid2D::new(1, 1, 1, vec![0.0], vec![0.0]).unwrap();
        let e = embed_2d(&g, &spec).unwrap();
        assert_eq!(component_pgm(&e, 1, 1, 0).unwrap(), "P2\n1 1\n255\n255\n");
    }

    #[test]
    fn stride_selection() {
        let req = VizRequest { grid_side: 14, dim: 768, stride: 20, out_dir: PathBuf::new() };
        let c = req.selected_components();
        assert_eq!(c.len(), 39);
        assert_eq!(*c.last().unwrap(), 760);
    }
}
