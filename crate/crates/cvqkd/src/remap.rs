//! Phase announcement schemes and receiver-side realignment.
//!
//! Two announcement schemes: the finite-M slice scheme (Alice announces the
//! slice floor n*pi/(2M) of the remainder) and its M -> infinity limit where
//! she announces the remainder mod(theta, pi/2) itself. Bob rotates each
//! heterodyne outcome by the negated announcement, mapping the sent phase to
//! the canonical four-state constellation {0, pi/2, pi, 3pi/2}.

use std::f64::consts::{FRAC_PI_2, TAU};

use thiserror::Error;

use crate::source::{decompose_phase, SourceError};

#[derive(Debug, Error, PartialEq)]
pub enum RemapError {
    #[error("phase out of domain [0, 2pi): {0}")]
    PhaseDomain(f64),
    #[error("slice count must be >= 1")]
    InvalidSliceCount,
}

impl From<SourceError> for RemapError {
    fn from(e: SourceError) -> Self {
        match e {
            SourceError::PhaseDomain(t) => RemapError::PhaseDomain(t),
            other => unreachable!("decompose_phase only raises domain errors: {other}"),
        }
    }
}

/// Finite slice announcement scheme with M slices of the [0, pi/2) region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceScheme {
    m: u32,
}

impl SliceScheme {
    pub fn new(m: u32) -> Result<Self, RemapError> {
        if m == 0 {
            return Err(RemapError::InvalidSliceCount);
        }
        Ok(Self { m })
    }

    pub fn m(&self) -> u32 {
        self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnouncementKind {
    Slice,
    Remainder,
}

/// Publicly announced phase information, a value in [0, pi/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Announcement {
    pub kind: AnnouncementKind,
    pub value: f64,
}

/// A complex heterodyne outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexOutcome {
    pub re: f64,
    pub im: f64,
}

impl ComplexOutcome {
    pub fn magnitude(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn phase(&self) -> f64 {
        self.im.atan2(self.re).rem_euclid(TAU)
    }
}

/// Slice-scheme announcement: keeps the quadrant x secret and announces the
/// slice floor n*pi/(2M) of the remainder, n = floor(mod(theta, pi/2) * 2M/pi).
pub fn announce_slice(theta: f64, s: SliceScheme) -> Result<(u8, Announcement), RemapError> {
    let (x, phi) = decompose_phase(theta)?;
    let m = f64::from(s.m);
    let n = ((phi / FRAC_PI_2 * m).floor()).min(m - 1.0);
    Ok((
        x,
        Announcement {
            kind: AnnouncementKind::Slice,
            value: n * FRAC_PI_2 / m,
        },
    ))
}

/// Remainder announcement (the M -> infinity limit): announces
/// phi = mod(theta, pi/2) exactly.
pub fn announce_remainder(theta: f64) -> Result<(u8, Announcement), RemapError> {
    let (x, phi) = decompose_phase(theta)?;
    Ok((
        x,
        Announcement {
            kind: AnnouncementKind::Remainder,
            value: phi,
        },
    ))
}

/// Bob's realignment: rotates the outcome by the negated announcement so a
/// transmitted phase x*pi/2 + phi maps to expected phase x*pi/2.
pub fn realign(y_prime: ComplexOutcome, a: &Announcement) -> ComplexOutcome {
    let (s, c) = (-a.value).sin_cos();
    ComplexOutcome {
        re: c * y_prime.re - s * y_prime.im,
        im: s * y_prime.re + c * y_prime.im,
    }
}

/// Worst-case post-realignment phase misalignment of the slice scheme:
/// pi/(2M). The remainder scheme has zero residual.
pub fn residual_misalignment(s: SliceScheme) -> f64 {
    FRAC_PI_2 / f64::from(s.m)
}
