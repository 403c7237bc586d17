//! Versioned binary path store: magic "PDMP1", little-endian records,
//! 64-bit FNV-1a digest over the canonical record bytes.

use crate::error::{PathError, RunError};
use crate::linalg::Vector;
use crate::simulator::{Event, EventKind, PathResult, PathStats, Trajectory};
use std::io::{Read, Write};

pub const MAGIC: &[u8; 5] = b"PDMP1";
pub const VERSION: u32 = 1;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Writer<W: Write> {
    inner: W,
    digest: u64,
}

impl<W: Write> Writer<W> {
    fn new(inner: W) -> Self {
        Writer {
            inner,
            digest: 0xcbf2_9ce4_8422_2325,
        }
    }

    fn raw(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        for &b in bytes {
            self.digest ^= b as u64;
            self.digest = self.digest.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.inner.write_all(bytes)
    }

    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.raw(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.raw(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.raw(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.raw(&v.to_bits().to_le_bytes())
    }
    fn vec<const D: usize>(&mut self, v: &Vector<D>) -> std::io::Result<()> {
        for k in 0..D {
            self.f64(v[k])?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn raw(&mut self, buf: &mut [u8]) -> Result<(), RunError> {
        self.inner.read_exact(buf).map_err(RunError::Io)
    }
    fn u8(&mut self) -> Result<u8, RunError> {
        let mut b = [0u8; 1];
        self.raw(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32, RunError> {
        let mut b = [0u8; 4];
        self.raw(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, RunError> {
        let mut b = [0u8; 8];
        self.raw(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, RunError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn vec<const D: usize>(&mut self) -> Result<Vector<D>, RunError> {
        let mut v = [0.0; D];
        for k in 0..D {
            v[k] = self.f64()?;
        }
        Ok(v)
    }
}

const EV_WINDOW: u8 = 0;
const EV_COLLISION: u8 = 1;
const EV_CANCEL: u8 = 2;
const EV_PASSTHROUGH: u8 = 3;
const EV_REFLECTION: u8 = 4;

const STATUS_OK: u8 = 0;
const STATUS_ERR: u8 = 1;

/// Serialize an ensemble; returns the digest of the record stream.
pub fn write_store<const D: usize, W: Write>(
    out: W,
    config_hash: u64,
    n_particles: usize,
    results: &[PathResult<D>],
) -> Result<u64, RunError> {
    let mut w = Writer::new(out);
    w.raw(MAGIC)?;
    w.u32(VERSION)?;
    w.u64(config_hash)?;
    w.u32(D as u32)?;
    w.u32(n_particles as u32)?;
    w.u64(results.len() as u64)?;
    for (idx, res) in results.iter().enumerate() {
        w.u64(idx as u64)?;
        match res {
            Err(err) => {
                w.u8(STATUS_ERR)?;
                let msg = err.to_string();
                w.u32(msg.len() as u32)?;
                w.raw(msg.as_bytes())?;
            }
            Ok(traj) => {
                w.u8(STATUS_OK)?;
                w.f64(traj.t_max)?;
                for x in &traj.x0 {
                    w.vec(x)?;
                }
                for v in &traj.v0 {
                    w.vec(v)?;
                }
                w.u32(traj.events.len() as u32)?;
                for ev in &traj.events {
                    w.f64(ev.t)?;
                    match &ev.kind {
                        EventKind::WindowOpen {
                            i,
                            j,
                            k,
                            gamma,
                            sigma,
                            t_exit_pred,
                        } => {
                            w.u8(EV_WINDOW)?;
                            w.u32(*i as u32)?;
                            w.u32(*j as u32)?;
                            w.u32(*k as u32)?;
                            w.f64(*gamma)?;
                            w.f64(*sigma)?;
                            w.f64(*t_exit_pred)?;
                        }
                        EventKind::Collision {
                            i,
                            j,
                            k,
                            s_entry,
                            t_exit_pred,
                            gamma,
                            e,
                            v_pre,
                            v_post,
                            suppressed,
                        } => {
                            w.u8(EV_COLLISION)?;
                            w.u32(*i as u32)?;
                            w.u32(*j as u32)?;
                            w.u32(*k as u32)?;
                            w.f64(*s_entry)?;
                            w.f64(*t_exit_pred)?;
                            w.f64(*gamma)?;
                            w.vec(e)?;
                            w.vec(&v_pre.0)?;
                            w.vec(&v_pre.1)?;
                            w.vec(&v_post.0)?;
                            w.vec(&v_post.1)?;
                            w.u8(*suppressed as u8)?;
                        }
                        EventKind::WindowCancel { i, j, k } => {
                            w.u8(EV_CANCEL)?;
                            w.u32(*i as u32)?;
                            w.u32(*j as u32)?;
                            w.u32(*k as u32)?;
                        }
                        EventKind::Passthrough { i, j } => {
                            w.u8(EV_PASSTHROUGH)?;
                            w.u32(*i as u32)?;
                            w.u32(*j as u32)?;
                        }
                        EventKind::Reflection {
                            i,
                            l,
                            x_hit,
                            v_pre,
                            v_post,
                        } => {
                            w.u8(EV_REFLECTION)?;
                            w.u32(*i as u32)?;
                            w.u32(*l as u32)?;
                            w.vec(x_hit)?;
                            w.vec(v_pre)?;
                            w.vec(v_post)?;
                        }
                    }
                }
            }
        }
    }
    Ok(w.digest)
}

pub struct StoreHeader {
    pub config_hash: u64,
    pub d: usize,
    pub n_particles: usize,
    pub n_paths: usize,
}

/// Read the whole store back; error records come back as opaque messages.
pub fn read_store<const D: usize, R: Read>(
    input: R,
) -> Result<(StoreHeader, Vec<Result<Trajectory<D>, String>>), RunError> {
    let mut r = Reader { inner: input };
    let mut magic = [0u8; 5];
    r.raw(&mut magic)?;
    if &magic != MAGIC {
        return Err(RunError::Store("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RunError::Store(format!("unsupported version {version}")));
    }
    let config_hash = r.u64()?;
    let d = r.u32()? as usize;
    if d != D {
        return Err(RunError::Store(format!("store has d = {d}, expected {D}")));
    }
    let n_particles = r.u32()? as usize;
    let n_paths = r.u64()? as usize;
    let mut out = Vec::with_capacity(n_paths);
    for idx in 0..n_paths {
        let got = r.u64()? as usize;
        if got != idx {
            return Err(RunError::Store("record index out of order".into()));
        }
        match r.u8()? {
            STATUS_ERR => {
                let len = r.u32()? as usize;
                let mut buf = vec![0u8; len];
                r.raw(&mut buf)?;
                out.push(Err(String::from_utf8_lossy(&buf).into_owned()));
            }
            STATUS_OK => {
                let t_max = r.f64()?;
                let mut x0 = Vec::with_capacity(n_particles);
                let mut v0 = Vec::with_capacity(n_particles);
                for _ in 0..n_particles {
                    x0.push(r.vec::<D>()?);
                }
                for _ in 0..n_particles {
                    v0.push(r.vec::<D>()?);
                }
                let n_events = r.u32()? as usize;
                let mut events = Vec::with_capacity(n_events);
                let mut stats = PathStats::default();
                for _ in 0..n_events {
                    let t = r.f64()?;
                    let kind = match r.u8()? {
                        EV_WINDOW => EventKind::WindowOpen {
                            i: r.u32()? as usize,
                            j: r.u32()? as usize,
                            k: r.u32()? as usize,
                            gamma: r.f64()?,
                            sigma: r.f64()?,
                            t_exit_pred: r.f64()?,
                        },
                        EV_COLLISION => {
                            let (i, j, k) =
                                (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
                            let s_entry = r.f64()?;
                            let t_exit_pred = r.f64()?;
                            let gamma = r.f64()?;
                            let e = r.vec::<D>()?;
                            let v_pre = (r.vec::<D>()?, r.vec::<D>()?);
                            let v_post = (r.vec::<D>()?, r.vec::<D>()?);
                            let suppressed = r.u8()? != 0;
                            if suppressed {
                                stats.suppressed_collisions += 1;
                            }
                            EventKind::Collision {
                                i,
                                j,
                                k,
                                s_entry,
                                t_exit_pred,
                                gamma,
                                e,
                                v_pre,
                                v_post,
                                suppressed,
                            }
                        }
                        EV_CANCEL => {
                            stats.canceled_windows += 1;
                            EventKind::WindowCancel {
                                i: r.u32()? as usize,
                                j: r.u32()? as usize,
                                k: r.u32()? as usize,
                            }
                        }
                        EV_PASSTHROUGH => {
                            stats.passthrough_suppressions += 1;
                            EventKind::Passthrough {
                                i: r.u32()? as usize,
                                j: r.u32()? as usize,
                            }
                        }
                        EV_REFLECTION => EventKind::Reflection {
                            i: r.u32()? as usize,
                            l: r.u32()? as usize,
                            x_hit: r.vec::<D>()?,
                            v_pre: r.vec::<D>()?,
                            v_post: r.vec::<D>()?,
                        },
                        other => {
                            return Err(RunError::Store(format!("unknown event tag {other}")))
                        }
                    };
                    events.push(Event { t, kind });
                }
                out.push(Ok(Trajectory {
                    x0,
                    v0,
                    t_max,
                    events,
                    stats,
                }));
            }
            other => return Err(RunError::Store(format!("unknown status {other}"))),
        }
    }
    Ok((
        StoreHeader {
            config_hash,
            d,
            n_particles,
            n_paths,
        },
        out,
    ))
}

/// Digest without writing anywhere.
pub fn digest_store<const D: usize>(
    config_hash: u64,
    n_particles: usize,
    results: &[PathResult<D>],
) -> u64 {
    let mut sink = std::io::sink();
    write_store(&mut sink, config_hash, n_particles, results).expect("sink write")
}

#[allow(clippy::type_complexity)]
pub fn error_fraction<const D: usize>(results: &[PathResult<D>]) -> f64 {
    let errs = results.iter().filter(|r| r.is_err()).count();
    errs as f64 / results.len().max(1) as f64
}

#[allow(dead_code)]
fn _assert_path_error_is_display(e: &PathError) -> String {
    e.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::kernels::Kernels;
    use crate::simulator::run_ensemble;

    #[test]
    fn store_roundtrip_preserves_trajectories_and_digest() {
        let cfg = ModelConfig::default_desk();
        let k = Kernels::<2>::new(&cfg);
        let results = run_ensemble(&cfg, &k, 32, 9, 1);
        let mut buf = Vec::new();
        let digest = write_store(&mut buf, 0xabcd, 3, &results).unwrap();
        assert_eq!(digest, digest_store(0xabcd, 3, &results));
        let (header, back) = read_store::<2, _>(buf.as_slice()).unwrap();
        assert_eq!(header.config_hash, 0xabcd);
        assert_eq!(header.n_paths, 32);
        for (orig, loaded) in results.iter().zip(back.iter()) {
            match (orig, loaded) {
                (Ok(a), Ok(b)) => assert_eq!(a, b),
                (Err(e), Err(msg)) => assert_eq!(&e.to_string(), msg),
                _ => panic!("status mismatch"),
            }
        }
    }
}
