//! Network file format.
//!
//! ```text
//! skilllab-mlp v1 activation=<relu|tanh> layers=<n0>,<n1>,...\n
//! <f64 little-endian> * param_count
//! ```
//!
//! Parameters follow layer order; within a layer the weight matrix comes
//! first (row-major, shape `(n_{l+1}, n_l)`), then the bias vector.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MLP_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "skilllab-mlp";

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

pub fn write_mlp<T: Scalar, W: Write>(net: &Mlp<T>, out: &mut W) -> Result<()> {
    let sizes: Vec<String> = net.layer_sizes().iter().map(|n| n.to_string()).collect();
    let header = format!(
        "{MAGIC} v{MLP_FORMAT_VERSION} activation={} layers={}\n",
        net.activation().name(),
        sizes.join(",")
    );
    let mut bytes = header.into_bytes();
    for v in net.iter_params() {
        v.write_le_f64(&mut bytes);
    }
    out.write_all(&bytes).map_err(io_err)
}

pub fn read_mlp<T: Scalar, R: BufRead>(input: &mut R) -> Result<Mlp<T>> {
    let mut header = Vec::new();
    input.read_until(b'\n', &mut header).map_err(io_err)?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Version("network header is not text".into()))?;
    let header = header.trim_end_matches('\n');
    let mut fields = header.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(Error::Version(format!("not a network file: {header:?}")));
    }
    let version = fields.next().unwrap_or("");
    if version != format!("v{MLP_FORMAT_VERSION}") {
        return Err(Error::Version(format!(
            "unsupported network format {version:?}, expected v{MLP_FORMAT_VERSION}"
        )));
    }
    let mut activation = None;
    let mut sizes = None;
    for field in fields {
        match field.split_once('=') {
            Some(("activation", v)) => activation = Activation::parse(v),
            Some(("layers", v)) => {
                sizes = v
                    .split(',')
                    .map(|n| n.parse::<usize>().ok())
                    .collect::<Option<Vec<_>>>()
            }
            _ => return Err(Error::Version(format!("unknown header field {field:?}"))),
        }
    }
    let activation =
        activation.ok_or_else(|| Error::Version("missing or invalid activation".into()))?;
    let sizes = sizes.ok_or_else(|| Error::Version("missing or invalid layer sizes".into()))?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Version(format!("invalid layer sizes {sizes:?}")));
    }

    let mut next = || -> Result<T> {
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf).map_err(io_err)?;
        Ok(T::lit(f64::from_le_bytes(buf)))
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            w.push(next()?);
        }
        let mut b = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            b.push(next()?);
        }
        weights.push(Array2::from_shape_vec((fan_out, fan_in), w).expect("sized above"));
        biases.push(Array1::from_vec(b));
    }
    Mlp::from_parts(activation, weights, biases)
}
