use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Finite universe U: unit ids, auxiliary covariate z known for every unit,
/// optional stratum labels and named study variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    ids: Vec<String>,
    z: Vec<f64>,
    strata: Option<Vec<usize>>,
    stratum_labels: Vec<String>,
    variables: IndexMap<String, Vec<f64>>,
}

impl Population {
    pub fn new(ids: Vec<String>, z: Vec<f64>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::InvalidPopulation(
                "population needs at least one unit".into(),
            ));
        }
        if ids.len() != z.len() {
            return Err(Error::LengthMismatch {
                expected: z.len(),
                got: ids.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("z"));
        }
        Ok(Self {
            ids,
            z,
            strata: None,
            stratum_labels: Vec::new(),
            variables: IndexMap::new(),
        })
    }

    /// Population with ids "1", "2", … .
    pub fn from_covariate(z: Vec<f64>) -> Result<Self> {
        let ids = (1..=z.len()).map(|i| i.to_string()).collect();
        Self::new(ids, z)
    }

    pub fn with_variable(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("study variable"));
        }
        self.variables.insert(name.to_string(), values);
        Ok(self)
    }

    /// Attaches stratum labels; strata are indexed in order of first appearance.
    pub fn with_strata<S: AsRef<str>>(mut self, labels: &[S]) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: labels.len(),
            });
        }
        let mut names: Vec<String> = Vec::new();
        let mut index = Vec::with_capacity(labels.len());
        for (k, label) in labels.iter().enumerate() {
            let label = label.as_ref();
            if label.is_empty() {
                return Err(Error::MissingStratum(self.ids[k].clone()));
            }
            let h = match names.iter().position(|n| n == label) {
                Some(h) => h,
                None => {
                    names.push(label.to_string());
                    names.len() - 1
                }
            };
            index.push(h);
        }
        self.strata = Some(index);
        self.stratum_labels = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn variable(&self, name: &str) -> Result<&[f64]> {
        self.variables
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn variable_names(&self) -> impl Iterator<Item = &str> {
        self.variables.keys().map(String::as_str)
    }

    pub fn has_strata(&self) -> bool {
        self.strata.is_some()
    }

    /// Stratum index per unit, if labelled.
    pub fn strata(&self) -> Option<&[usize]> {
        self.strata.as_deref()
    }

    pub fn stratum_labels(&self) -> &[String] {
        &self.stratum_labels
    }

    /// Unit indices of each stratum, in stratum-index order.
    pub fn stratum_members(&self) -> Option<Vec<Vec<usize>>> {
        let strata = self.strata.as_ref()?;
        let mut members = vec![Vec::new(); self.stratum_labels.len()];
        for (k, &h) in strata.iter().enumerate() {
            members[h].push(k);
        }
        Some(members)
    }

    /// Reads `id[,stratum],z,<study variables…>` CSV with a header row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let id_col =
            col("id").ok_or_else(|| Error::InvalidPopulation("missing 'id' column".into()))?;
        let z_col =
            col("z").ok_or_else(|| Error::InvalidPopulation("missing 'z' column".into()))?;
        let stratum_col = col("stratum");
        let var_cols: Vec<usize> = (0..headers.len())
            .filter(|&i| i != id_col && i != z_col && Some(i) != stratum_col)
            .collect();

        let mut ids = Vec::new();
        let mut z = Vec::new();
        let mut labels = Vec::new();
        let mut vars: Vec<Vec<f64>> = vec![Vec::new(); var_cols.len()];
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("");
            let parse = |i: usize| -> Result<f64> {
                field(i).parse::<f64>().map_err(|_| {
                    Error::InvalidPopulation(format!(
                        "row {}: column '{}' is not a number: '{}'",
                        line + 2,
                        headers[i],
                        field(i)
                    ))
                })
            };
            ids.push(field(id_col).to_string());
            z.push(parse(z_col)?);
            if let Some(s) = stratum_col {
                labels.push(field(s).to_string());
            }
            for (slot, &c) in vars.iter_mut().zip(&var_cols) {
                slot.push(parse(c)?);
            }
        }
        let mut pop = Population::new(ids, z)?;
        if stratum_col.is_some() {
            pop = pop.with_strata(&labels)?;
        }
        for (values, &c) in vars.into_iter().zip(&var_cols) {
            pop = pop.with_variable(&headers[c], values)?;
        }
        Ok(pop)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        if self.has_strata() {
            header.push("stratum".into());
        }
        header.push("z".into());
        header.extend(self.variables.keys().cloned());
        wtr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.ids[k].clone()];
            if let Some(strata) = &self.strata {
                row.push(self.stratum_labels[strata[k]].clone());
            }
            row.push(format!("{}", self.z[k]));
            row.extend(self.variables.values().map(|v| format!("{}", v[k])));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
