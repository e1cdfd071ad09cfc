// SPDX-License-Identifier: Apache-2.0

//! Reference synchronizers the hybrid one is compared against.

pub mod certified;
pub mod uncertified;

pub use certified::CertifiedSync;
pub use uncertified::UncertifiedSync;
