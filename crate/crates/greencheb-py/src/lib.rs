//! (under construction)
use pyo3::prelude::*;

#[pymodule]
fn greencheb_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
