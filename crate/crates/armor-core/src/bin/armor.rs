fn main() {
    println!("armor");
}
