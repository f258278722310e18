//! The two clock domains and the chiplet/interposer boundary.
//!
//! Time is counted in chiplet ticks; the interposer runs one cycle every
//! four ticks. Interposer cycle `k` starts at tick `4k`.

use crate::codec::{Flit, FlitPosition, LinkWidth};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClockDomains {
    pub chiplet_period: u64,
    pub interposer_period: u64,
}

impl ClockDomains {
    pub const BASELINE: ClockDomains = ClockDomains {
        chiplet_period: 1,
        interposer_period: 4,
    };

    pub fn ratio(&self) -> u64 {
        self.interposer_period / self.chiplet_period
    }

    pub fn is_interposer_edge(&self, tick: u64) -> bool {
        tick.is_multiple_of(self.interposer_period)
    }

    pub fn cycle_of_edge(&self, tick: u64) -> u64 {
        tick / self.interposer_period
    }

    pub fn tick_of(&self, cycle: u64) -> u64 {
        cycle * self.interposer_period
    }

    /// First interposer cycle that sees a flit produced at `tick`.
    pub fn visible_cycle(&self, tick: u64) -> u64 {
        tick / self.interposer_period + 1
    }

    /// Chiplet tick at which a flit leaving the interposer at `cycle` arrives.
    pub fn arrival_tick(&self, cycle: u64) -> u64 {
        (cycle + 1) * self.interposer_period
    }
}

/// Split a 128-bit flit into its low and high 64-bit halves.
pub fn split(flit: Flit) -> [Flit; 2] {
    let head = flit.position.is_head();
    let tail = flit.position.is_tail();
    let lo = Flit {
        payload: flit.payload & u64::MAX as u128,
        position: if head {
            FlitPosition::Head
        } else {
            FlitPosition::Body
        },
        ..flit
    };
    let hi = Flit {
        payload: flit.payload >> 64,
        position: if tail {
            FlitPosition::Tail
        } else {
            FlitPosition::Body
        },
        ..flit
    };
    [lo, hi]
}

/// Inverse of [`split`].
pub fn merge(lo: Flit, hi: Flit) -> Flit {
    let position = match (lo.position.is_head(), hi.position.is_tail()) {
        (true, true) => FlitPosition::HeadTail,
        (true, false) => FlitPosition::Head,
        (false, true) => FlitPosition::Tail,
        (false, false) => FlitPosition::Body,
    };
    Flit {
        payload: lo.payload | (hi.payload << 64),
        position,
        ..lo
    }
}

/// Chiplet-side 128-bit flits as they appear on an interposer link.
pub fn to_interposer(flits: &[Flit], width: LinkWidth) -> Vec<Flit> {
    match width {
        LinkWidth::W128 => flits.to_vec(),
        LinkWidth::W64 => flits.iter().flat_map(|&f| split(f)).collect(),
    }
}

/// Interposer flits regrouped into 128-bit chiplet flits.
pub fn to_chiplet(flits: &[Flit], width: LinkWidth) -> Vec<Flit> {
    match width {
        LinkWidth::W128 => flits.to_vec(),
        LinkWidth::W64 => flits
            .chunks_exact(2)
            .map(|pair| merge(pair[0], pair[1]))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, CoherenceMessage, DataBlock, MessageType, NodeId};
    use proptest::prelude::*;

    #[test]
    fn tick_five_is_seen_at_cycle_two() {
        let c = ClockDomains::BASELINE;
        assert_eq!(c.visible_cycle(5), 2);
        assert_eq!(c.visible_cycle(3), 1);
        assert_eq!(c.visible_cycle(4), 2);
        assert_eq!(c.arrival_tick(2), 12);
        assert_eq!(c.ratio(), 4);
    }

    #[test]
    fn control_flit_splits_in_two_and_merges_back() {
        let msg = CoherenceMessage::control(MessageType::GetS, NodeId(3), NodeId::mc(1), 0, 0x1234_5640);
        let wide = encode(&msg, LinkWidth::W128).unwrap().flits;
        assert_eq!(wide.len(), 1);
        let narrow = to_interposer(&wide, LinkWidth::W64);
        assert_eq!(narrow.len(), 2);
        assert_eq!(narrow, encode(&msg, LinkWidth::W64).unwrap().flits);
        assert_eq!(to_chiplet(&narrow, LinkWidth::W64), wide);
    }

    proptest! {
        #[test]
        fn split_matches_narrow_encoding(words in prop::array::uniform8(any::<u64>()), addr in 0u64..(1 << 32), dirty: bool) {
            let mut msg = CoherenceMessage::control(MessageType::WritebackData, NodeId(9), NodeId::mc(2), 2, addr);
            msg.dirty = dirty;
            msg.data = Some(DataBlock(words));
            let wide = encode(&msg, LinkWidth::W128).unwrap().flits;
            let narrow = encode(&msg, LinkWidth::W64).unwrap().flits;
            prop_assert_eq!(to_interposer(&wide, LinkWidth::W64), narrow.clone());
            prop_assert_eq!(to_chiplet(&narrow, LinkWidth::W64), wide);
        }
    }
}
