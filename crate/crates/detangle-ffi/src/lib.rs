// C ABI surface; filled in once the core crate is stable.
