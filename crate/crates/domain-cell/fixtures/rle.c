/* Run-length codec and deliberately faulty functions, linked as a foreign
 * static library when the c-fixture feature is on. Same ABI as the
 * built-in Rust versions. */

#include <signal.h>
#include <stddef.h>
#include <stdint.h>

/* Provided by the Rust side: allocates from the running domain's heap. */
extern unsigned char *dc_fixture_alloc(size_t size);

void dcf_rle_compress(const unsigned char *in, size_t len, unsigned char *out, size_t *cap)
{
    size_t w = 0, i = 0;
    while (i < len) {
        unsigned char b = in[i];
        size_t run = 1;
        while (run < 255 && i + run < len && in[i + run] == b)
            run++;
        if (w + 2 > *cap) {
            *cap = 0;
            return;
        }
        out[w++] = (unsigned char)run;
        out[w++] = b;
        i += run;
    }
    *cap = w;
}

size_t dcf_rle_uncompressed_len(const unsigned char *in, size_t len)
{
    size_t n = 0;
    if (len % 2)
        return SIZE_MAX;
    for (size_t i = 0; i < len; i += 2) {
        if (in[i] == 0)
            return SIZE_MAX;
        n += in[i];
    }
    return n;
}

int dcf_rle_uncompress(const unsigned char *in, size_t len, unsigned char *out, size_t *cap)
{
    size_t need = dcf_rle_uncompressed_len(in, len);
    size_t w = 0;
    if (need == SIZE_MAX || need > *cap)
        return 0;
    for (size_t i = 0; i < len; i += 2)
        for (unsigned k = 0; k < in[i]; k++)
            out[w++] = in[i + 1];
    *cap = w;
    return 1;
}

/* The size is computed in 32 bits; the copy loop is not. */
static void repeat_overflow(const unsigned char *pat, size_t len)
{
    if (len < 2 || len > UINT32_MAX)
        return;
    uint32_t count = UINT32_MAX / (uint32_t)len + 1;
    uint32_t total = (uint32_t)len * count;
    volatile unsigned char *dst = dc_fixture_alloc(total ? total : 1);
    if (!dst)
        return;
    for (size_t i = 0; i < count; i++)
        for (size_t j = 0; j < len; j++)
            dst[i * len + j] = pat[j];
}

void dcf_inject_fault(int mode, size_t offset, unsigned char *scratch, size_t len)
{
    switch (mode) {
    case 0:
        *(volatile unsigned char *)(scratch + len + offset) = 0xA5;
        break;
    case 1:
        repeat_overflow(scratch, len);
        break;
    default:
        raise(SIGABRT);
    }
}
