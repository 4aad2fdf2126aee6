//! Fixtures shared by the criterion targets in `benches/`.

use gqi_core::packet::{Packet, QubitDescriptor, QubitEncoding};

/// A packet carrying `qubits` descriptors and `ec_len` bytes of error correction.
pub fn sample_packet(qubits: u32, ec_len: usize) -> Packet {
    let descriptors = (0..qubits)
        .map(|k| QubitDescriptor {
            qubit_id: k,
            entanglement_group: k / 2 + 1,
            encoding: QubitEncoding::Dv,
        })
        .collect();
    let ec = (0..ec_len).map(|b| b as u8).collect();
    Packet::new(1, 2, 1_000_000, 2_000_000, descriptors, Some(7), ec).expect("fixture is valid")
}
