fn main() {
    #[cfg(feature = "c-fixture")]
    {
        println!("cargo:rerun-if-changed=fixtures/rle.c");
        cc::Build::new().file("fixtures/rle.c").warnings(true).compile("dcfixture");
    }
}
