use super::{put_f64s, CodecError, Reader};
use crate::synthdata::ParticleSet;

pub const PARTICLE_MAGIC: [u8; 4] = *b"VDFP";
const VERSION: u8 = 1;
const FLAG_WEIGHTS: u8 = 1;

/// Size of the raw velocity payload: `N * d * 8` bytes. This is the
/// "raw particle data" size used for compression ratios.
pub fn raw_particle_bytes(particles: &ParticleSet) -> usize {
    particles.velocities().len() * 8
}

/// `.vdfp` encoding of a particle set.
pub fn encode_particles(particles: &ParticleSet) -> Vec<u8> {
    let d = particles.dimension();
    let label = particles.species_label().as_bytes();
    let label_len = label.len().min(u16::MAX as usize);
    let mut out = Vec::with_capacity(32 + label_len + raw_particle_bytes(particles) * 2);
    out.extend_from_slice(&PARTICLE_MAGIC);
    out.push(VERSION);
    out.push(d as u8);
    out.push(if particles.weights().is_some() { FLAG_WEIGHTS } else { 0 });
    out.push(0);
    out.extend_from_slice(&(particles.len() as u64).to_le_bytes());
    out.extend_from_slice(&(label_len as u16).to_le_bytes());
    out.extend_from_slice(&label[..label_len]);
    put_f64s(&mut out, particles.nominal_temperature());
    put_f64s(&mut out, particles.velocities());
    if let Some(w) = particles.weights() {
        put_f64s(&mut out, w);
    }
    out
}

pub fn decode_particles(bytes: &[u8]) -> Result<ParticleSet, CodecError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| CodecError::BadMagic)? != PARTICLE_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let d = r.u8()? as usize;
    let flags = r.u8()?;
    let _reserved = r.u8()?;
    let n = usize::try_from(r.u64()?).map_err(|_| CodecError::InvalidField("particle count".into()))?;
    let label_len = r.u16()? as usize;
    let label = String::from_utf8(r.take(label_len)?.to_vec())
        .map_err(|_| CodecError::InvalidField("species label is not UTF-8".into()))?;
    let temperature = r.f64s(d)?;
    let count = n
        .checked_mul(d)
        .ok_or_else(|| CodecError::InvalidField("particle count".into()))?;
    let velocities = r.f64s(count)?;
    let weights = if flags & FLAG_WEIGHTS != 0 { Some(r.f64s(n)?) } else { None };
    if r.remaining() > 0 {
        return Err(CodecError::TrailingBytes(r.remaining()));
    }
    ParticleSet::new(d, velocities, weights, label, temperature).map_err(|e| CodecError::InvalidField(e.to_string()))
}
