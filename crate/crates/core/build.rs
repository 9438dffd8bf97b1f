fn main() -> Result<(), Box<dyn std::error::Error>> {
    tonic_build::configure()
        .bytes(["."])
        .compile_protos(&["proto/servicehub.proto"], &["proto"])?;
    println!("cargo:rerun-if-changed=proto/servicehub.proto");
    Ok(())
}
