//! Actuator classes and the gear bank shared by every layer.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The six actuator classes carried by an executive terminal, in wire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuator {
    Led,
    Heating,
    Cooling,
    Dehumidify,
    Drip,
    Humidifier,
}

impl Actuator {
    pub const ALL: [Actuator; 6] = [
        Actuator::Led,
        Actuator::Heating,
        Actuator::Cooling,
        Actuator::Dehumidify,
        Actuator::Drip,
        Actuator::Humidifier,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Highest gear accepted by this actuator; 0 is always off.
    pub const fn max_gear(self) -> u8 {
        match self {
            Actuator::Led => 3,
            Actuator::Heating | Actuator::Cooling | Actuator::Dehumidify => 5,
            Actuator::Drip | Actuator::Humidifier => 1,
        }
    }

    /// Type code used in instruction frames (0x30..=0x35).
    pub const fn instruction_code(self) -> u8 {
        0x30 + self as u8
    }

    /// Type code used in status frames (0x50..=0x55).
    pub const fn status_code(self) -> u8 {
        0x50 + self as u8
    }

    pub fn from_instruction_code(code: u8) -> Option<Self> {
        code.checked_sub(0x30).and_then(|i| Self::from_index(i as usize))
    }

    pub fn from_status_code(code: u8) -> Option<Self> {
        code.checked_sub(0x50).and_then(|i| Self::from_index(i as usize))
    }

    pub const fn name(self) -> &'static str {
        match self {
            Actuator::Led => "LED",
            Actuator::Heating => "heating",
            Actuator::Cooling => "cooling",
            Actuator::Dehumidify => "dehumidify",
            Actuator::Drip => "drip",
            Actuator::Humidifier => "humidifier",
        }
    }

    /// Accepts the short names used on the command line and in scenario files.
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "led" => Some(Actuator::Led),
            "heating" | "heat" => Some(Actuator::Heating),
            "cooling" | "cool" => Some(Actuator::Cooling),
            "dehumidify" | "dehum" => Some(Actuator::Dehumidify),
            "drip" => Some(Actuator::Drip),
            "humidifier" | "humid" => Some(Actuator::Humidifier),
            _ => None,
        }
    }
}

impl fmt::Display for Actuator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Gear settings for all six actuator classes.
///
/// The bank itself does not enforce gear bounds; use [`ActuatorBank::validate`]
/// or [`ActuatorBank::set_clamped`] where the bounds matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActuatorBank {
    gears: [u8; 6],
}

impl ActuatorBank {
    pub const OFF: ActuatorBank = ActuatorBank { gears: [0; 6] };

    pub const fn from_gears(gears: [u8; 6]) -> Self {
        Self { gears }
    }

    pub const fn gears(&self) -> [u8; 6] {
        self.gears
    }

    pub fn get(&self, actuator: Actuator) -> u8 {
        self.gears[actuator.index()]
    }

    pub fn set(&mut self, actuator: Actuator, gear: u8) {
        self.gears[actuator.index()] = gear;
    }

    /// Stores `gear` clamped to the actuator's range and reports whether clamping happened.
    pub fn set_clamped(&mut self, actuator: Actuator, gear: u8) -> bool {
        let clamped = gear.min(actuator.max_gear());
        self.gears[actuator.index()] = clamped;
        clamped != gear
    }

    pub fn with(mut self, actuator: Actuator, gear: u8) -> Self {
        self.set(actuator, gear);
        self
    }

    /// First actuator whose gear exceeds its range, if any.
    pub fn validate(&self) -> Result<(), (Actuator, u8)> {
        for actuator in Actuator::ALL {
            let gear = self.get(actuator);
            if gear > actuator.max_gear() {
                return Err((actuator, gear));
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Actuator, u8)> + '_ {
        Actuator::ALL.into_iter().map(move |a| (a, self.get(a)))
    }

    /// Actuators whose gear in `other` differs from `self`, with the new gear.
    pub fn changes_to(&self, other: &ActuatorBank) -> Vec<(Actuator, u8)> {
        other.iter().filter(|&(a, g)| self.get(a) != g).collect()
    }
}

impl fmt::Display for ActuatorBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (actuator, gear)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{actuator}={gear}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_mirror_between_instruction_and_status() {
        for actuator in Actuator::ALL {
            assert_eq!(actuator.status_code() - actuator.instruction_code(), 0x20);
            assert_eq!(Actuator::from_instruction_code(actuator.instruction_code()), Some(actuator));
            assert_eq!(Actuator::from_status_code(actuator.status_code()), Some(actuator));
        }
        assert_eq!(Actuator::from_instruction_code(0x36), None);
        assert_eq!(Actuator::from_status_code(0x4F), None);
    }

    #[test]
    fn clamping_reports_overflow() {
        let mut bank = ActuatorBank::OFF;
        assert!(bank.set_clamped(Actuator::Led, 9));
        assert_eq!(bank.get(Actuator::Led), 3);
        assert!(!bank.set_clamped(Actuator::Heating, 5));
        assert_eq!(bank.validate(), Ok(()));
        bank.set(Actuator::Drip, 2);
        assert_eq!(bank.validate(), Err((Actuator::Drip, 2)));
    }

    #[test]
    fn changes_lists_only_differences() {
        let a = ActuatorBank::OFF.with(Actuator::Cooling, 2);
        let b = a.with(Actuator::Led, 1);
        assert_eq!(a.changes_to(&b), vec![(Actuator::Led, 1)]);
        assert!(a.changes_to(&a).is_empty());
    }
}
