//! Recording geometry and the data types passed between stages.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE_HZ: f64 = 250.0;
pub const N_CHANNELS: usize = 32;
/// One second at the recording rate.
pub const EPOCH_LEN: usize = 250;
pub const N_CLASSES: usize = 9;
/// x, y, pressure, velocity.
pub const N_KINEMATICS: usize = 4;

/// The nine distinct glyphs of "HELLO, WORLD!", in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Glyph {
    H,
    E,
    L,
    O,
    Comma,
    W,
    R,
    D,
    Exclamation,
}

impl Glyph {
    pub const ALL: [Glyph; N_CLASSES] = [
        Glyph::H,
        Glyph::E,
        Glyph::L,
        Glyph::O,
        Glyph::Comma,
        Glyph::W,
        Glyph::R,
        Glyph::D,
        Glyph::Exclamation,
    ];

    pub fn class(self) -> usize {
        self as usize
    }

    pub fn from_class(c: usize) -> Option<Self> {
        Self::ALL.get(c).copied()
    }

    pub fn symbol(self) -> char {
        match self {
            Glyph::H => 'H',
            Glyph::E => 'E',
            Glyph::L => 'L',
            Glyph::O => 'O',
            Glyph::Comma => ',',
            Glyph::W => 'W',
            Glyph::R => 'R',
            Glyph::D => 'D',
            Glyph::Exclamation => '!',
        }
    }
}

/// The written glyphs of one phrase repetition (the space is not written).
pub const PHRASE: [Glyph; 12] = [
    Glyph::H,
    Glyph::E,
    Glyph::L,
    Glyph::L,
    Glyph::O,
    Glyph::Comma,
    Glyph::W,
    Glyph::O,
    Glyph::R,
    Glyph::L,
    Glyph::D,
    Glyph::Exclamation,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PenEvent {
    Down,
    Up,
}

impl PenEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            PenEvent::Down => "pen_down",
            PenEvent::Up => "pen_up",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pen_down" => Some(PenEvent::Down),
            "pen_up" => Some(PenEvent::Up),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub sample_index: usize,
    pub kind: PenEvent,
    pub char_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinSample {
    pub sample_index: usize,
    pub x: f64,
    pub y: f64,
    pub pressure: f64,
    pub velocity: f64,
}

/// Continuous multichannel EEG with pen events and tablet kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSession {
    eeg: Tensor,
    events: Vec<Event>,
    kinematics: Vec<KinSample>,
}

impl RawSession {
    /// Validates event ordering and alternation.
    pub fn new(eeg: Tensor, events: Vec<Event>, kinematics: Vec<KinSample>) -> Result<Self> {
        if eeg.ndim() != 2 {
            return Err(dim_err!("EEG must be channels x samples, got {:?}", eeg.shape()));
        }
        let s = eeg.shape()[1];
        let mut expect = PenEvent::Down;
        for (i, e) in events.iter().enumerate() {
            if i > 0 && e.sample_index <= events[i - 1].sample_index {
                return Err(contract_err!("event {} not strictly after its predecessor", i));
            }
            if e.kind != expect {
                return Err(contract_err!("event {} breaks pen_down/pen_up alternation", i));
            }
            if e.char_class >= N_CLASSES {
                return Err(crate::Error::Label {
                    label: e.char_class,
                    classes: N_CLASSES,
                });
            }
            if e.sample_index >= s {
                return Err(contract_err!("event {} at sample {} beyond recording of {}", i, e.sample_index, s));
            }
            expect = match e.kind {
                PenEvent::Down => PenEvent::Up,
                PenEvent::Up => PenEvent::Down,
            };
        }
        if kinematics.windows(2).any(|w| w[1].sample_index <= w[0].sample_index) {
            return Err(contract_err!("kinematics sample indices must increase"));
        }
        Ok(Self {
            eeg,
            events,
            kinematics,
        })
    }

    pub fn eeg(&self) -> &Tensor {
        &self.eeg
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn kinematics(&self) -> &[KinSample] {
        &self.kinematics
    }

    pub fn n_channels(&self) -> usize {
        self.eeg.shape()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.eeg.shape()[1]
    }

    /// Same events and kinematics over a transformed EEG of identical shape.
    pub fn with_eeg(&self, eeg: Tensor) -> Result<Self> {
        if eeg.shape() != self.eeg.shape() {
            return Err(dim_err!("replacement EEG {:?} vs {:?}", eeg.shape(), self.eeg.shape()));
        }
        Ok(Self {
            eeg,
            events: self.events.clone(),
            kinematics: self.kinematics.clone(),
        })
    }

    pub fn pen_down_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == PenEvent::Down).count()
    }
}

/// Non-fatal condition reported by a processing stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub stage: &'static str,
    pub message: String,
}

impl Warning {
    pub fn new(stage: &'static str, message: String) -> Self {
        Self { stage, message }
    }
}

impl core::fmt::Display for Warning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}
