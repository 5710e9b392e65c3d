//! The 4-object × 4-message signaling space.
//!
//! Objects are enumerated as `blue circle, blue box, red circle, red box`
//! (index = `2·color + shape`, blue = 0, circle = 0). Messages `00..11` are
//! indexed by their binary value. A mapping assigns a message to every
//! object; mapping ids enumerate assignments lexicographically with object 0
//! as the most significant base-4 digit, so id 0 maps everything to `00`
//! and id 255 maps everything to `11`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bayes::BeliefState;
use crate::error::{Error, Result};
use crate::space::FiniteSpace;

pub const SPACE_ID: &str = "signal-4x4";
pub const OBJECT_COUNT: usize = 4;
pub const MESSAGE_COUNT: usize = 4;
pub const MAPPING_COUNT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Box,
}

impl Color {
    fn name(self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Red => "red",
        }
    }
}

impl Shape {
    fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Box => "box",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignalObject {
    pub color: Color,
    pub shape: Shape,
}

impl SignalObject {
    pub const ALL: [SignalObject; OBJECT_COUNT] = [
        SignalObject { color: Color::Blue, shape: Shape::Circle },
        SignalObject { color: Color::Blue, shape: Shape::Box },
        SignalObject { color: Color::Red, shape: Shape::Circle },
        SignalObject { color: Color::Red, shape: Shape::Box },
    ];

    pub fn index(self) -> usize {
        2 * (self.color == Color::Red) as usize + (self.shape == Shape::Box) as usize
    }

    pub fn name(self) -> String {
        format!("{} {}", self.color.name(), self.shape.name())
    }
}

impl fmt::Display for SignalObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.name(), self.shape.name())
    }
}

/// A two-bit message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Message(u8);

impl Message {
    pub fn new(value: u8) -> Result<Self> {
        if value as usize >= MESSAGE_COUNT {
            return Err(Error::Domain(format!("message value {value} out of range")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    fn high(self) -> u8 {
        self.0 >> 1
    }

    fn low(self) -> u8 {
        self.0 & 1
    }

    pub fn parse(bits: &str) -> Result<Self> {
        match bits {
            "00" => Ok(Self(0)),
            "01" => Ok(Self(1)),
            "10" => Ok(Self(2)),
            "11" => Ok(Self(3)),
            _ => Err(Error::Domain(format!("`{bits}` is not a two-bit message"))),
        }
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02b}", self.0)
    }
}

/// A total function from the four objects to messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignalMapping {
    messages: [Message; OBJECT_COUNT],
}

impl SignalMapping {
    pub fn new(messages: [Message; OBJECT_COUNT]) -> Self {
        Self { messages }
    }

    pub fn from_id(id: usize) -> Result<Self> {
        if id >= MAPPING_COUNT {
            return Err(Error::Domain(format!("mapping id {id} out of range")));
        }
        let mut messages = [Message(0); OBJECT_COUNT];
        for (i, m) in messages.iter_mut().enumerate() {
            *m = Message(((id >> (2 * (OBJECT_COUNT - 1 - i))) & 3) as u8);
        }
        Ok(Self { messages })
    }

    /// Builds a mapping from `(object, message)` pairs covering every object.
    pub fn from_pairs(pairs: &[(SignalObject, &str)]) -> Result<Self> {
        let mut slots: [Option<Message>; OBJECT_COUNT] = [None; OBJECT_COUNT];
        for (obj, bits) in pairs {
            slots[obj.index()] = Some(Message::parse(bits)?);
        }
        let mut messages = [Message(0); OBJECT_COUNT];
        for (i, s) in slots.iter().enumerate() {
            messages[i] = s.ok_or_else(|| Error::Domain(format!("object `{}` is unmapped", SignalObject::ALL[i])))?;
        }
        Ok(Self { messages })
    }

    pub fn id(&self) -> usize {
        self.messages.iter().fold(0, |acc, m| acc * 4 + m.0 as usize)
    }

    pub fn message(&self, object: SignalObject) -> Message {
        self.messages[object.index()]
    }

    pub fn messages(&self) -> &[Message; OBJECT_COUNT] {
        &self.messages
    }

    pub fn is_bijective(&self) -> bool {
        let mut seen = [false; MESSAGE_COUNT];
        for m in &self.messages {
            if seen[m.0 as usize] {
                return false;
            }
            seen[m.0 as usize] = true;
        }
        true
    }

    /// Applies a relabeling of messages, `perm[old] = new`.
    pub fn relabel(&self, perm: [u8; MESSAGE_COUNT]) -> Self {
        let mut messages = self.messages;
        for m in &mut messages {
            *m = Message(perm[m.0 as usize]);
        }
        Self { messages }
    }

    fn factors(&self, color_first: bool) -> bool {
        let attr = |o: SignalObject, first: bool| -> u8 {
            if first == color_first {
                o.color as u8
            } else {
                o.shape as u8
            }
        };
        let mut high = [None; 2];
        let mut low = [None; 2];
        for o in SignalObject::ALL {
            let m = self.message(o);
            for (slot, bit) in
                [(&mut high[attr(o, true) as usize], m.high()), (&mut low[attr(o, false) as usize], m.low())]
            {
                match slot {
                    None => *slot = Some(bit),
                    Some(b) if *b != bit => return false,
                    _ => {}
                }
            }
        }
        true
    }

    /// Assignment rendered in object order, e.g. `00-10-01-11`.
    pub fn assignment_string(&self) -> String {
        self.messages.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("-")
    }
}

impl fmt::Display for SignalMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = SignalObject::ALL.iter().map(|o| format!("{o}→{}", self.message(*o))).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingClass {
    Degenerate,
    Holistic,
    Systematic,
    Other,
}

impl MappingClass {
    pub const ALL: [MappingClass; 4] =
        [MappingClass::Degenerate, MappingClass::Holistic, MappingClass::Systematic, MappingClass::Other];

    pub fn name(self) -> &'static str {
        match self {
            MappingClass::Degenerate => "degenerate",
            MappingClass::Holistic => "holistic",
            MappingClass::Systematic => "systematic",
            MappingClass::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MappingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// All 256 mappings in id order.
pub fn enumerate_mappings() -> Vec<SignalMapping> {
    (0..MAPPING_COUNT).map(|id| SignalMapping::from_id(id).expect("id in range")).collect()
}

/// Degenerate: one message for everything. Systematic: a bijection whose
/// two bits are functions of the two attributes (either attribute may own
/// the high bit). Holistic: any other bijection.
pub fn classify(m: &SignalMapping) -> MappingClass {
    let first = m.messages[0];
    if m.messages.iter().all(|x| *x == first) {
        return MappingClass::Degenerate;
    }
    if !m.is_bijective() {
        return MappingClass::Other;
    }
    if m.factors(true) || m.factors(false) {
        MappingClass::Systematic
    } else {
        MappingClass::Holistic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSeparators {
    pub catch_all: String,
    pub object_rule: String,
    pub factor_head: String,
    pub factor_rule: String,
}

/// Rendering conventions for grammar descriptions. The shipped default
/// lives in `data/coding_calibration.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodingTokenizer {
    pub start_symbol: String,
    pub arrow: String,
    pub catch_all_name: String,
    pub first_factor: String,
    pub second_factor: String,
    pub separators: RuleSeparators,
}

const CALIBRATION: &str = include_str!("../data/coding_calibration.toml");

impl Default for CodingTokenizer {
    fn default() -> Self {
        toml::from_str(CALIBRATION).expect("bundled calibration table parses")
    }
}

impl CodingTokenizer {
    fn len(tokens: &[&str], sep: &str) -> usize {
        tokens.join(sep).chars().count()
    }

    fn catch_all(&self, msg: Message) -> usize {
        let head = format!("{}:", self.start_symbol);
        let msg = msg.to_string();
        Self::len(&[&head, &msg, &self.arrow, &self.catch_all_name], &self.separators.catch_all)
    }

    fn object_rule(&self, obj: SignalObject, msg: Message) -> usize {
        let head = format!("{}:", self.start_symbol);
        let (msg, name) = (msg.to_string(), obj.name());
        Self::len(&[&head, &msg, &self.arrow, &name], &self.separators.object_rule)
    }

    fn factored(&self) -> usize {
        let body = format!("{},{}", self.first_factor, self.second_factor);
        let head = Self::len(&[&self.start_symbol, &self.arrow, &body], &self.separators.factor_head);
        let rule = |factor: &str, bit: u8, value: &str| {
            let f = format!("{factor}:");
            let b = bit.to_string();
            Self::len(&[&f, &b, &self.arrow, value], &self.separators.factor_rule)
        };
        // only attribute-value names enter the count, so the bit assignment
        // and attribute order do not change the length
        head + rule(&self.first_factor, 0, Color::Blue.name())
            + rule(&self.first_factor, 1, Color::Red.name())
            + rule(&self.second_factor, 0, Shape::Circle.name())
            + rule(&self.second_factor, 1, Shape::Box.name())
    }

    /// Coding length: the shortest description among a closed template
    /// family (one catch-all rule, one rule per object, factored rules for
    /// systematic mappings, and a catch-all with per-object exceptions).
    pub fn coding_length(&self, m: &SignalMapping) -> usize {
        let holistic: usize = SignalObject::ALL.iter().map(|o| self.object_rule(*o, m.message(*o))).sum();
        let mut best = holistic;
        for default in 0..MESSAGE_COUNT as u8 {
            let default = Message(default);
            if !m.messages.contains(&default) {
                continue;
            }
            let exceptions: usize = SignalObject::ALL
                .iter()
                .filter(|o| m.message(**o) != default)
                .map(|o| self.object_rule(*o, m.message(*o)))
                .sum();
            best = best.min(self.catch_all(default) + exceptions);
        }
        if classify(m) == MappingClass::Systematic {
            best = best.min(self.factored());
        }
        best
    }
}

/// Coding length under the default tokenizer.
pub fn coding_length(m: &SignalMapping) -> usize {
    CodingTokenizer::default().coding_length(m)
}

/// `P₀(h) ∝ 2^(−α(h)/c)`.
pub fn coding_prior(space: &[SignalMapping], c: f64, tokenizer: &CodingTokenizer) -> Result<BeliefState> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Domain(format!("coding prior scale must be positive, got {c}")));
    }
    let logs = space.iter().map(|m| -(tokenizer.coding_length(m) as f64) / c * std::f64::consts::LN_2).collect();
    BeliefState::from_log_weights(SPACE_ID, logs)
}

/// The signaling task as a [`FiniteSpace`]: inputs are objects, outputs are
/// messages, and hypothesis `h` is mapping id `h`.
pub fn signal_space() -> FiniteSpace {
    let mappings = enumerate_mappings();
    FiniteSpace::from_fn(SPACE_ID, MAPPING_COUNT, OBJECT_COUNT, MESSAGE_COUNT, |h, x| {
        mappings[h].messages[x].0 as usize
    })
    .expect("signal space is well formed")
}

/// Class label of every mapping id.
pub fn class_labels() -> Vec<MappingClass> {
    enumerate_mappings().iter().map(classify).collect()
}

/// The three reference mappings used throughout the tests and examples.
pub mod reference {
    use super::*;

    const BC: SignalObject = SignalObject::ALL[0];
    const BB: SignalObject = SignalObject::ALL[1];
    const RC: SignalObject = SignalObject::ALL[2];
    const RB: SignalObject = SignalObject::ALL[3];

    pub fn degenerate() -> SignalMapping {
        SignalMapping::from_id(0).expect("in range")
    }

    pub fn systematic() -> SignalMapping {
        SignalMapping::from_pairs(&[(BC, "00"), (RC, "10"), (BB, "01"), (RB, "11")]).expect("total")
    }

    pub fn holistic() -> SignalMapping {
        SignalMapping::from_pairs(&[(BC, "00"), (RC, "01"), (RB, "10"), (BB, "11")]).expect("total")
    }
}

/// Writes `mapping_id,assignment,class,alpha,prior` rows for every mapping.
pub fn write_prior_table<W: Write>(
    out: W,
    c: f64,
    tokenizer: &CodingTokenizer,
) -> Result<(), Box<dyn std::error::Error>> {
    let mappings = enumerate_mappings();
    let prior = coding_prior(&mappings, c, tokenizer)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mapping_id", "assignment", "class", "alpha", "prior"])?;
    for m in &mappings {
        w.write_record([
            m.id().to_string(),
            m.assignment_string(),
            classify(m).to_string(),
            tokenizer.coding_length(m).to_string(),
            format!("{:.17e}", prior.prob(m.id())),
        ])?;
    }
    w.flush()?;
    Ok(())
}
