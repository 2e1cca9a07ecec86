//! Binary persistence of trained solutions.
//!
//! Self-describing flat little-endian format. A network block is
//!
//! ```text
//! magic "DXNET001" | n_dims u32 | dims u32... | shift f64... | scale f64...
//! | params f64... (row-major weights then biases, layer order)
//! ```
//!
//! A solution file wraps the grid, the trained initial value, diagnostics,
//! optionally the xVA framework parameters (rates and collateral echoed
//! verbatim), and one network block per timestep. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::bsde::{ControlInput, TrainedBsde, TrainingDiagnostics};
use crate::error::{Error, Result};
use crate::market::TimeGrid;
use crate::neural::NetworkParams;
use crate::xva::{CollateralSpec, TimeFn, XvaRates, XvaSolution};

const NET_MAGIC: &[u8; 8] = b"DXNET001";
const SOL_MAGIC: &[u8; 8] = b"DXSOL001";

const KIND_CLEAN: u8 = 0;
const KIND_XVA: u8 = 1;

// ---------------------------------------------------------------- writers

fn w_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

fn w_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for v in vs {
        w_f64(w, *v)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- readers

fn r_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|_| Error::Deserialize("unexpected end of file".into()))?;
    Ok(b[0])
}

fn r_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Deserialize("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Deserialize("unexpected end of file".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn r_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Deserialize("unexpected end of file".into()))?;
    Ok(f64::from_le_bytes(b))
}

fn r_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r_f64(r)?);
    }
    Ok(out)
}

fn expect_magic<R: Read>(r: &mut R, expected: &[u8; 8]) -> Result<()> {
    let mut found = [0u8; 8];
    r.read_exact(&mut found)
        .map_err(|_| Error::Deserialize("file too short for header".into()))?;
    if &found != expected {
        return Err(Error::VersionMismatch {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }
    Ok(())
}

// ------------------------------------------------------------- network io

pub fn write_network<W: Write>(w: &mut W, net: &NetworkParams) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    w_u32(w, net.dims().len() as u32)?;
    for d in net.dims() {
        w_u32(w, *d as u32)?;
    }
    w_f64s(w, net.shift())?;
    w_f64s(w, net.scale())?;
    w_f64s(w, net.flat())?;
    Ok(())
}

pub fn read_network<R: Read>(r: &mut R) -> Result<NetworkParams> {
    expect_magic(r, NET_MAGIC)?;
    let n_dims = r_u32(r)? as usize;
    if n_dims < 2 || n_dims > 64 {
        return Err(Error::Deserialize(format!("implausible dim count {n_dims}")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(r_u32(r)? as usize);
    }
    if dims.iter().any(|d| *d == 0 || *d > 1 << 20) {
        return Err(Error::Deserialize("implausible layer dims".into()));
    }
    let shift = r_f64s(r, dims[0])?;
    let scale = r_f64s(r, dims[0])?;
    let params = r_f64s(r, crate::neural::param_count(&dims))?;
    NetworkParams::from_parts(dims, shift, scale, params)
        .map_err(|e| Error::Deserialize(e.to_string()))
}

// ----------------------------------------------------------- timefn io

fn write_timefn<W: Write>(w: &mut W, f: &TimeFn) -> Result<()> {
    match f {
        TimeFn::Const(v) => {
            w_u8(w, 0)?;
            w_f64(w, *v)?;
        }
        TimeFn::Step { times, values } => {
            w_u8(w, 1)?;
            w_u32(w, times.len() as u32)?;
            w_f64s(w, times)?;
            w_f64s(w, values)?;
        }
    }
    Ok(())
}

fn read_timefn<R: Read>(r: &mut R) -> Result<TimeFn> {
    match r_u8(r)? {
        0 => Ok(TimeFn::Const(r_f64(r)?)),
        1 => {
            let n = r_u32(r)? as usize;
            if n == 0 || n > 1 << 20 {
                return Err(Error::Deserialize("implausible step-function size".into()));
            }
            let times = r_f64s(r, n)?;
            let values = r_f64s(r, n)?;
            TimeFn::step(times, values).map_err(|e| Error::Deserialize(e.to_string()))
        }
        tag => Err(Error::Deserialize(format!("unknown time-function tag {tag}"))),
    }
}

// ----------------------------------------------------------- solution io

fn write_body<W: Write>(w: &mut W, trained: &TrainedBsde, framework: Option<&XvaSolution>) -> Result<()> {
    w.write_all(SOL_MAGIC)?;
    w_u8(w, if framework.is_some() { KIND_XVA } else { KIND_CLEAN })?;
    w_f64(w, trained.grid.horizon())?;
    w_u32(w, trained.grid.steps() as u32)?;
    w_f64(w, trained.xi)?;
    let d = &trained.diagnostics;
    w_f64(w, d.best_validation_loss)?;
    w_u64(w, d.best_iteration as u64)?;
    w_u32(w, d.loss_history.len() as u32)?;
    w_f64s(w, &d.loss_history)?;
    w_u32(w, d.validation_history.len() as u32)?;
    for (it, loss) in &d.validation_history {
        w_u64(w, *it as u64)?;
        w_f64(w, *loss)?;
    }
    if let Some(sol) = framework {
        w_u8(
            w,
            match sol.input {
                ControlInput::Auxiliary => 0,
                ControlInput::AssetState => 1,
            },
        )?;
        for f in [
            &sol.rates.r,
            &sol.rates.r_fund_lend,
            &sol.rates.r_fund_borrow,
            &sol.rates.r_coll_lend,
            &sol.rates.r_coll_borrow,
            &sol.rates.lambda_bank,
            &sol.rates.lambda_cpty,
        ] {
            write_timefn(w, f)?;
        }
        w_f64(w, sol.rates.recovery_bank)?;
        w_f64(w, sol.rates.recovery_cpty)?;
        w_u8(w, sol.collateral.enabled as u8)?;
        w_f64(w, sol.collateral.threshold_receive)?;
        w_f64(w, sol.collateral.threshold_post)?;
    }
    w_u32(w, trained.networks.len() as u32)?;
    for net in &trained.networks {
        write_network(w, net)?;
    }
    Ok(())
}

struct Body {
    trained: TrainedBsde,
    framework: Option<(ControlInput, XvaRates, CollateralSpec)>,
}

fn read_body<R: Read>(r: &mut R) -> Result<Body> {
    expect_magic(r, SOL_MAGIC)?;
    let kind = r_u8(r)?;
    if kind != KIND_CLEAN && kind != KIND_XVA {
        return Err(Error::Deserialize(format!("unknown solution kind {kind}")));
    }
    let horizon = r_f64(r)?;
    let steps = r_u32(r)? as usize;
    let grid = TimeGrid::new(horizon, steps).map_err(|e| Error::Deserialize(e.to_string()))?;
    let xi = r_f64(r)?;
    let best_validation_loss = r_f64(r)?;
    let best_iteration = r_u64(r)? as usize;
    let n_loss = r_u32(r)? as usize;
    if n_loss > 1 << 28 {
        return Err(Error::Deserialize("implausible loss history length".into()));
    }
    let loss_history = r_f64s(r, n_loss)?;
    let n_val = r_u32(r)? as usize;
    if n_val > 1 << 28 {
        return Err(Error::Deserialize("implausible validation history".into()));
    }
    let mut validation_history = Vec::with_capacity(n_val);
    for _ in 0..n_val {
        let it = r_u64(r)? as usize;
        let loss = r_f64(r)?;
        validation_history.push((it, loss));
    }
    let framework = if kind == KIND_XVA {
        let input = match r_u8(r)? {
            0 => ControlInput::Auxiliary,
            1 => ControlInput::AssetState,
            tag => return Err(Error::Deserialize(format!("unknown input tag {tag}"))),
        };
        let r_fn = read_timefn(r)?;
        let rfl = read_timefn(r)?;
        let rfb = read_timefn(r)?;
        let rcl = read_timefn(r)?;
        let rcb = read_timefn(r)?;
        let lb = read_timefn(r)?;
        let lc = read_timefn(r)?;
        let recovery_bank = r_f64(r)?;
        let recovery_cpty = r_f64(r)?;
        let rates = XvaRates {
            r: r_fn,
            r_fund_lend: rfl,
            r_fund_borrow: rfb,
            r_coll_lend: rcl,
            r_coll_borrow: rcb,
            lambda_bank: lb,
            lambda_cpty: lc,
            recovery_bank,
            recovery_cpty,
        };
        rates.validate().map_err(|e| Error::Deserialize(e.to_string()))?;
        let enabled = r_u8(r)? != 0;
        let threshold_receive = r_f64(r)?;
        let threshold_post = r_f64(r)?;
        Some((
            input,
            rates,
            CollateralSpec {
                enabled,
                threshold_receive,
                threshold_post,
            },
        ))
    } else {
        None
    };
    let n_nets = r_u32(r)? as usize;
    if n_nets != steps {
        return Err(Error::Deserialize(format!(
            "expected {steps} networks, file declares {n_nets}"
        )));
    }
    let mut networks = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        networks.push(read_network(r)?);
    }
    Ok(Body {
        trained: TrainedBsde {
            grid,
            xi,
            networks,
            diagnostics: TrainingDiagnostics {
                loss_history,
                validation_history,
                best_validation_loss,
                best_iteration,
            },
        },
        framework,
    })
}

fn check_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut buf = [0u8; 1];
    match r.read(&mut buf)? {
        0 => Ok(()),
        _ => Err(Error::Deserialize("trailing bytes after solution".into())),
    }
}

/// Saves a trained clean-value solution.
pub fn save_trained(path: &Path, trained: &TrainedBsde) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_body(&mut w, trained, None)?;
    w.flush()?;
    Ok(())
}

/// Loads a trained clean-value solution.
pub fn load_trained(path: &Path) -> Result<TrainedBsde> {
    let mut r = BufReader::new(File::open(path)?);
    let body = read_body(&mut r)?;
    if body.framework.is_some() {
        return Err(Error::Deserialize(
            "file holds an xVA solution, not a clean claim".into(),
        ));
    }
    check_eof(&mut r)?;
    Ok(body.trained)
}

/// Saves a recursive xVA solution with its framework parameters.
pub fn save_xva_solution(path: &Path, sol: &XvaSolution) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_body(&mut w, &sol.trained, Some(sol))?;
    w.flush()?;
    Ok(())
}

/// Loads a recursive xVA solution.
pub fn load_xva_solution(path: &Path) -> Result<XvaSolution> {
    let mut r = BufReader::new(File::open(path)?);
    let body = read_body(&mut r)?;
    let (input, rates, collateral) = body.framework.ok_or_else(|| {
        Error::Deserialize("file holds a clean claim, not an xVA solution".into())
    })?;
    check_eof(&mut r)?;
    let adjustment = body.trained.xi;
    Ok(XvaSolution {
        trained: body.trained,
        adjustment,
        input,
        rates,
        collateral,
    })
}
